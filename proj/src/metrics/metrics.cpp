#include "tunnelcrack/metrics.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

namespace tunnelcrack::metrics {

using nlohmann::json;

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

TimingStats TimingStats::from(std::int64_t count, double seconds) {
  if (count < 0 || seconds < 0.0) throw ValueError("timing values must be nonnegative");
  TimingStats t;
  t.count = count;
  t.seconds = seconds;
  t.fps = seconds > 0.0 ? static_cast<double>(count) / seconds : 0.0;
  return t;
}

namespace {

void check_pairs(std::span<const Label> preds, std::span<const Label> truths) {
  if (preds.empty()) throw ValueError("no predictions to score");
  if (preds.size() != truths.size()) {
    throw ValueError("predictions and truths differ in length");
  }
}

double ratio(std::int64_t num, std::int64_t den) {
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionCounts classification_confusion(std::span<const Label> preds,
                                         std::span<const Label> truths) {
  check_pairs(preds, truths);
  ConfusionCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == Label::crack;
    const bool t = truths[i] == Label::crack;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double classification_accuracy(std::span<const Label> preds, std::span<const Label> truths) {
  const auto c = classification_confusion(preds, truths);
  return ratio(c.tp + c.tn, c.total());
}

TimingStats measure_fps(const std::function<void(const Tensor&)>& infer,
                        const std::vector<Tensor>& images) {
  if (images.empty()) throw ValueError("measure_fps needs at least one image");
  infer(images.front());
  const auto start = std::chrono::steady_clock::now();
  for (const auto& image : images) infer(image);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  return TimingStats::from(static_cast<std::int64_t>(images.size()), elapsed.count());
}

TimingStats measure_fps(const models::ModelGraph& model, const std::vector<Tensor>& images) {
  return measure_fps([&](const Tensor& x) { (void)model.forward(x); }, images);
}

ConfusionCounts pixel_confusion(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("mask shapes differ: " + to_string(pred.shape()) + " vs " +
                     to_string(gt.shape()));
  }
  ConfusionCounts c;
  const auto p = pred.data();
  const auto g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if ((p[i] != 0.0 && p[i] != 1.0) || (g[i] != 0.0 && g[i] != 1.0)) {
      throw ValueError("masks must be binary (0/1)");
    }
    const bool pp = p[i] == 1.0;
    const bool gg = g[i] == 1.0;
    if (pp && gg) ++c.tp;
    else if (pp) ++c.fp;
    else if (gg) ++c.fn;
    else ++c.tn;
  }
  return c;
}

SegScores seg_scores(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) {
    throw ValueError("confusion counts must be nonnegative");
  }
  if (c.tp + c.fp + c.fn == 0) return {1.0, 1.0, 1.0, 1.0};
  SegScores s;
  s.precision = c.tp + c.fp > 0 ? ratio(c.tp, c.tp + c.fp) : 0.0;
  s.recall = c.tp + c.fn > 0 ? ratio(c.tp, c.tp + c.fn) : 0.0;
  const double pr = s.precision + s.recall;
  s.f1 = pr > 0.0 ? 2.0 * s.precision * s.recall / pr : 0.0;
  s.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  return s;
}

bool detect_decision(double iou, double d) { return iou > d; }

ImageScore score_image(const std::string& id, const ConfusionCounts& counts, double d) {
  ImageScore s;
  s.id = id;
  s.counts = counts;
  s.scores = seg_scores(counts);
  s.detected = detect_decision(s.scores.iou, d);
  return s;
}

SegmentationReport aggregate_report(std::vector<ImageScore> per_image, double d) {
  if (per_image.empty()) throw ValueError("segmentation report needs at least one image");
  SegmentationReport r;
  r.images = static_cast<std::int64_t>(per_image.size());
  r.detection_threshold = d;
  std::int64_t detected = 0;
  for (auto& img : per_image) {
    img.scores = seg_scores(img.counts);
    img.detected = detect_decision(img.scores.iou, d);
    r.total += img.counts;
    r.macro.precision += img.scores.precision;
    r.macro.recall += img.scores.recall;
    r.macro.f1 += img.scores.f1;
    r.macro.iou += img.scores.iou;
    detected += img.detected ? 1 : 0;
  }
  const auto n = static_cast<double>(r.images);
  r.macro.precision /= n;
  r.macro.recall /= n;
  r.macro.f1 /= n;
  r.macro.iou /= n;
  r.micro = seg_scores(r.total);
  r.detection_rate = static_cast<double>(detected) / n;
  r.per_image = std::move(per_image);
  return r;
}

SegmentationReport dataset_report(const std::vector<MaskPair>& pairs, double d) {
  std::vector<ImageScore> scores;
  scores.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    scores.push_back(score_image(p.id.empty() ? std::to_string(i) : p.id,
                                 pixel_confusion(p.pred, p.gt), d));
  }
  return aggregate_report(std::move(scores), d);
}

ClassificationReport classification_report(std::span<const Label> preds,
                                           std::span<const Label> truths) {
  ClassificationReport r;
  r.counts = classification_confusion(preds, truths);
  r.images = r.counts.total();
  r.crack_images = r.counts.tp + r.counts.fn;
  r.background_images = r.counts.fp + r.counts.tn;
  r.accuracy = ratio(r.counts.tp + r.counts.tn, r.images);
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

json to_json(const SegScores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"iou", s.iou}};
}

json to_json(const TimingStats& t) {
  return {{"count", t.count}, {"seconds", t.seconds}, {"fps", t.fps}};
}

json to_json(const SegmentationReport& r) {
  json per = json::array();
  for (const auto& img : r.per_image) {
    per.push_back({{"image", img.id},
                   {"counts", to_json(img.counts)},
                   {"scores", to_json(img.scores)},
                   {"detected", img.detected}});
  }
  return {{"images", r.images},
          {"detection_threshold", r.detection_threshold},
          {"counts", to_json(r.total)},
          {"micro", to_json(r.micro)},
          {"macro", to_json(r.macro)},
          {"detection_rate", r.detection_rate},
          {"per_image", per}};
}

json to_json(const ClassificationReport& r) {
  json j = {{"images", r.images},
            {"background_images", r.background_images},
            {"crack_images", r.crack_images},
            {"counts", to_json(r.counts)},
            {"accuracy", r.accuracy}};
  if (r.timing) j["timing"] = to_json(*r.timing);
  return j;
}

json to_json(const MetricsReport& r) {
  json j = json::object();
  if (r.classification) j["classification"] = to_json(*r.classification);
  if (r.segmentation) j["segmentation"] = to_json(*r.segmentation);
  return j;
}

ConfusionCounts counts_from_json(const json& j) {
  return {j.at("tp").get<std::int64_t>(), j.at("fp").get<std::int64_t>(),
          j.at("fn").get<std::int64_t>(), j.at("tn").get<std::int64_t>()};
}

SegScores scores_from_json(const json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(),
          j.at("f1").get<double>(), j.at("iou").get<double>()};
}

TimingStats timing_from_json(const json& j) {
  TimingStats t;
  t.count = j.at("count").get<std::int64_t>();
  t.seconds = j.at("seconds").get<double>();
  t.fps = j.at("fps").get<double>();
  return t;
}

SegmentationReport segmentation_from_json(const json& j) {
  SegmentationReport r;
  r.images = j.at("images").get<std::int64_t>();
  r.detection_threshold = j.at("detection_threshold").get<double>();
  r.total = counts_from_json(j.at("counts"));
  r.micro = scores_from_json(j.at("micro"));
  r.macro = scores_from_json(j.at("macro"));
  r.detection_rate = j.at("detection_rate").get<double>();
  for (const auto& item : j.at("per_image")) {
    ImageScore s;
    s.id = item.at("image").get<std::string>();
    s.counts = counts_from_json(item.at("counts"));
    s.scores = scores_from_json(item.at("scores"));
    s.detected = item.at("detected").get<bool>();
    r.per_image.push_back(std::move(s));
  }
  return r;
}

ClassificationReport classification_from_json(const json& j) {
  ClassificationReport r;
  r.images = j.at("images").get<std::int64_t>();
  r.background_images = j.at("background_images").get<std::int64_t>();
  r.crack_images = j.at("crack_images").get<std::int64_t>();
  r.counts = counts_from_json(j.at("counts"));
  r.accuracy = j.at("accuracy").get<double>();
  if (j.contains("timing")) r.timing = timing_from_json(j.at("timing"));
  return r;
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  if (j.contains("classification")) {
    r.classification = classification_from_json(j.at("classification"));
  }
  if (j.contains("segmentation")) r.segmentation = segmentation_from_json(j.at("segmentation"));
  return r;
}

std::string segmentation_csv(const SegmentationReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "scope,image,tp,fp,fn,tn,precision,recall,f1,iou,detected\n";
  auto row = [&](const char* scope, const std::string& id, const ConfusionCounts& c,
                 const SegScores& s, const std::string& detected) {
    out << scope << ',' << id << ',' << c.tp << ',' << c.fp << ',' << c.fn << ',' << c.tn
        << ',' << s.precision << ',' << s.recall << ',' << s.f1 << ',' << s.iou << ','
        << detected << '\n';
  };
  for (const auto& img : r.per_image) {
    row("image", img.id, img.counts, img.scores, img.detected ? "1" : "0");
  }
  row("micro", "", r.total, r.micro, "");
  row("macro", "", r.total, r.macro, "");
  return out.str();
}

std::string classification_csv(const ClassificationReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "images,background_images,crack_images,tp,fp,fn,tn,accuracy,fps\n";
  out << r.images << ',' << r.background_images << ',' << r.crack_images << ',' << r.counts.tp
      << ',' << r.counts.fp << ',' << r.counts.fn << ',' << r.counts.tn << ',' << r.accuracy
      << ',';
  if (r.timing) out << r.timing->fps;
  out << '\n';
  return out.str();
}

void write_report(const MetricsReport& r, const std::filesystem::path& json_path) {
  std::ofstream out(json_path);
  if (!out) throw ValueError("cannot write report " + json_path.string());
  out << to_json(r).dump(2) << '\n';
}

MetricsReport read_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw ValueError("cannot read report " + json_path.string());
  return report_from_json(json::parse(in));
}

}  // namespace tunnelcrack::metrics
