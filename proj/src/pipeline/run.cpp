#include "tunnelcrack/pipeline/run.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tunnelcrack/models/densenet.hpp"
#include "tunnelcrack/models/segmenter.hpp"
#include "tunnelcrack/scorecam.hpp"

namespace tunnelcrack::pipeline {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

std::string file_safe(const std::string& name) {
  std::string out = name;
  for (char& ch : out) {
    const bool keep = std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-';
    if (!keep) ch = '-';
  }
  return out;
}

std::string heatmap_file_name(const std::string& stem, const std::string& tap, std::int64_t c,
                              bool overlay) {
  return stem + "_" + file_safe(tap) + "_class" + std::to_string(c) +
         (overlay ? "_overlay.png" : "_heatmap.png");
}

data::SampleManifest rebase_manifest(const data::SampleManifest& manifest, const fs::path& dir) {
  data::SampleManifest out = manifest;
  const auto target = fs::absolute(dir).lexically_normal();
  auto rebase = [&](std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return;
    const auto abs = fs::absolute(manifest.resolve(p)).lexically_normal();
    p = abs.lexically_relative(target).generic_string();
  };
  for (auto& r : out.records) {
    rebase(r.image_path);
    rebase(r.mask_path);
  }
  out.base_dir = dir;
  return out;
}

// ---------------------------------------------------------------------------
// Report text forms

namespace {

json score_json(const metrics::ImageScore& s) {
  return {{"id", s.id},
          {"counts", metrics::to_json(s.counts)},
          {"scores", metrics::to_json(s.scores)},
          {"detected", s.detected}};
}

metrics::ImageScore score_from(const json& j) {
  return {j.at("id").get<std::string>(), metrics::counts_from_json(j.at("counts")),
          metrics::scores_from_json(j.at("scores")), j.at("detected").get<bool>()};
}

json record_json(const RunRecord& r) {
  json j{{"image", r.image}, {"truth", models::to_string(r.truth)}, {"ok", r.ok}};
  j["error"] = r.error;
  j["probs"] = r.probs ? json(*r.probs) : json(nullptr);
  j["predicted"] = r.predicted ? json(models::to_string(*r.predicted)) : json(nullptr);
  j["mask"] = r.mask ? json(*r.mask) : json(nullptr);
  j["scores"] = r.scores ? score_json(*r.scores) : json(nullptr);
  j["heatmaps"] = r.heatmaps;
  return j;
}

RunRecord record_from(const json& j) {
  RunRecord r;
  r.image = j.at("image").get<std::string>();
  r.truth = models::label_from_string(j.at("truth").get<std::string>());
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  if (!j.at("probs").is_null()) r.probs = j.at("probs").get<std::array<double, 2>>();
  if (!j.at("predicted").is_null()) {
    r.predicted = models::label_from_string(j.at("predicted").get<std::string>());
  }
  if (!j.at("mask").is_null()) r.mask = j.at("mask").get<std::string>();
  if (!j.at("scores").is_null()) r.scores = score_from(j.at("scores"));
  r.heatmaps = j.at("heatmaps").get<std::vector<std::string>>();
  return r;
}

}  // namespace

json to_json(const RunReport& report, bool include_timing) {
  json records = json::array();
  for (const auto& r : report.records) records.push_back(record_json(r));
  json j{{"images", report.records.size()},
         {"failures", report.failures},
         {"records", std::move(records)},
         {"metrics", metrics::to_json(report.metrics)}};
  if (include_timing) {
    j["timing"] = {{"classify", metrics::to_json(report.timing.classify)},
                   {"segment", metrics::to_json(report.timing.segment)},
                   {"explain", metrics::to_json(report.timing.explain)}};
  }
  return j;
}

RunReport run_report_from_json(const json& j) {
  RunReport r;
  for (const auto& rec : j.at("records")) r.records.push_back(record_from(rec));
  r.failures = j.at("failures").get<std::int64_t>();
  r.metrics = metrics::report_from_json(j.at("metrics"));
  if (j.contains("timing")) {
    const auto& t = j.at("timing");
    r.timing.classify = metrics::timing_from_json(t.at("classify"));
    r.timing.segment = metrics::timing_from_json(t.at("segment"));
    r.timing.explain = metrics::timing_from_json(t.at("explain"));
  }
  return r;
}

std::string run_report_csv(const RunReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "image,truth,ok,p_background,p_crack,predicted,mask,tp,fp,fn,tn,precision,recall,f1,"
         "iou,detected,heatmaps,error\n";
  for (const auto& r : report.records) {
    out << r.image << ',' << models::to_string(r.truth) << ',' << (r.ok ? 1 : 0) << ',';
    if (r.probs) out << (*r.probs)[0] << ',' << (*r.probs)[1] << ',';
    else out << ",,";
    out << (r.predicted ? models::to_string(*r.predicted) : "") << ',' << r.mask.value_or("")
        << ',';
    if (r.scores) {
      const auto& c = r.scores->counts;
      const auto& s = r.scores->scores;
      out << c.tp << ',' << c.fp << ',' << c.fn << ',' << c.tn << ',' << s.precision << ','
          << s.recall << ',' << s.f1 << ',' << s.iou << ',' << (r.scores->detected ? 1 : 0);
    } else {
      out << ",,,,,,,,";
    }
    std::string maps;
    for (const auto& h : r.heatmaps) maps += (maps.empty() ? "" : ";") + h;
    std::string error = r.error;
    for (char& ch : error) {
      if (ch == ',' || ch == '\n') ch = ' ';
    }
    out << ',' << maps << ',' << error << '\n';
  }
  return out.str();
}

void write_run_report(const RunReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream js(dir / "run_report.json");
  std::ofstream csv(dir / "run_report.csv");
  if (!js || !csv) throw data::IoError("cannot write run report into " + dir.string());
  js << to_json(report).dump(2) << '\n';
  csv << run_report_csv(report);
}

RunReport read_run_report(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw data::IoError("cannot read run report " + json_path.string());
  return run_report_from_json(json::parse(in));
}

bool same_apart_from_timing(const RunReport& a, const RunReport& b) {
  return to_json(a, false) == to_json(b, false);
}

// ---------------------------------------------------------------------------
// Commands

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

scorecam::ScoreCamOptions cam_options(const PipelineConfig& config) {
  scorecam::ScoreCamOptions o;
  o.mask_batch = config.mask_batch;
  return o;
}

// Writes the 8-bit heatmap and its overlay; returns their paths relative to
// the output directory.
std::vector<std::string> emit_heatmap(const scorecam::Heatmap& raw, const Tensor& unit_image,
                                      const std::string& stem, double alpha,
                                      const fs::path& out_dir) {
  const auto h = unit_image.dim(2);
  const auto w = unit_image.dim(3);
  const auto map = scorecam::upsample(scorecam::unit_max(raw), h, w);
  const auto heat_rel = fs::path("heatmaps") / heatmap_file_name(stem, raw.layer, raw.class_index, false);
  const auto over_rel = fs::path("heatmaps") / heatmap_file_name(stem, raw.layer, raw.class_index, true);
  fs::create_directories(out_dir / "heatmaps");
  data::save_grayscale(map.values, out_dir / heat_rel);
  data::save_rgb(scorecam::overlay(map, unit_image, alpha), out_dir / over_rel);
  return {heat_rel.generic_string(), over_rel.generic_string()};
}

void check_taps(const models::ModelGraph& model, const std::vector<std::string>& taps) {
  for (const auto& tap : taps) {
    try {
      model.resolve_tap(tap);
    } catch (const ValueError& e) {
      throw ConfigError(e.what());
    }
  }
}

std::vector<std::string> unique_stems(const std::vector<data::SampleRecord>& records) {
  std::map<std::string, int> seen;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto stem = file_safe(fs::path(records[i].image_path).stem().string());
    if (seen[stem]++ > 0) stem += "_" + std::to_string(i);
    out.push_back(stem);
  }
  return out;
}

}  // namespace

RunReport run_pipeline(const PipelineConfig& config, const data::SampleManifest& manifest) {
  config.validate();
  if (manifest.records.empty()) throw ConfigError("manifest has no records");
  const auto classifier = load_classifier(config);
  const auto segmenter = load_segmenter(config);
  check_taps(segmenter, config.explain_taps);
  const fs::path& out_dir = config.output_dir;
  fs::create_directories(out_dir / "masks");

  RunReport report;
  const auto stems = unique_stems(manifest.records);
  std::vector<models::Label> preds;
  std::vector<models::Label> truths;
  std::vector<metrics::ImageScore> seg_scores;
  double t_cls = 0.0;
  double t_seg = 0.0;
  double t_cam = 0.0;

  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    RunRecord out;
    out.image = rec.image_path;
    out.truth = rec.label;
    try {
      const auto image =
          data::load_image(manifest.resolve(rec.image_path), config.cls_height, config.cls_width);
      const auto t0 = Clock::now();
      const auto result = models::classify(classifier, image);
      t_cls += seconds_since(t0);
      ++report.timing.classify.count;
      out.probs = result.probs;
      out.predicted = result.label;
      preds.push_back(result.label);
      truths.push_back(rec.label);

      if (result.label == models::Label::crack) {
        const auto unit = data::load_image_unit(manifest.resolve(rec.image_path),
                                                config.seg_height, config.seg_width);
        const auto seg_input = data::standardize(unit);
        const auto t1 = Clock::now();
        const auto mask = models::segment(segmenter, seg_input, config.seg_threshold);
        t_seg += seconds_since(t1);
        ++report.timing.segment.count;
        const auto mask_rel = (fs::path("masks") / (stems[i] + ".png")).generic_string();
        data::save_mask(mask, out_dir / mask_rel);
        out.mask = mask_rel;
        if (!rec.mask_path.empty()) {
          const auto gt =
              data::load_mask(manifest.resolve(rec.mask_path), config.seg_height, config.seg_width);
          out.scores = metrics::score_image(rec.image_path, metrics::pixel_confusion(mask, gt),
                                            config.detection_threshold);
          seg_scores.push_back(*out.scores);
        }
        if (!config.explain_taps.empty()) {
          const auto t2 = Clock::now();
          for (const auto& r : scorecam::explain_stages(segmenter, seg_input, config.explain_taps,
                                                        config.explain_class,
                                                        cam_options(config))) {
            for (auto& p : emit_heatmap(r.heatmap, unit, stems[i], config.overlay_alpha, out_dir)) {
              out.heatmaps.push_back(std::move(p));
            }
          }
          t_cam += seconds_since(t2);
          ++report.timing.explain.count;
        }
      }
    } catch (const Error& e) {
      out.ok = false;
      out.error = e.what();
      ++report.failures;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
      ++report.failures;
    }
    report.records.push_back(std::move(out));
  }

  if (!preds.empty()) report.metrics.classification = metrics::classification_report(preds, truths);
  if (!seg_scores.empty()) {
    report.metrics.segmentation =
        metrics::aggregate_report(std::move(seg_scores), config.detection_threshold);
  }
  report.timing.classify = metrics::TimingStats::from(report.timing.classify.count, t_cls);
  report.timing.segment = metrics::TimingStats::from(report.timing.segment.count, t_seg);
  report.timing.explain = metrics::TimingStats::from(report.timing.explain.count, t_cam);
  write_run_report(report, out_dir);
  return report;
}

metrics::MetricsReport eval_command(const PipelineConfig& config,
                                    const data::SampleManifest& manifest) {
  config.validate();
  const auto test = manifest.select(data::Split::test);
  if (test.empty()) throw ConfigError("manifest has no test records");
  const bool with_cls = !config.classifier_weights.empty();
  const bool with_seg = !config.segmenter_weights.empty();
  if (!with_cls && !with_seg) throw ConfigError("eval needs classifier_weights or segmenter_weights");

  metrics::MetricsReport report;
  if (with_cls) {
    const auto model = load_classifier(config);
    std::vector<Tensor> images;
    std::vector<models::Label> truths;
    for (const auto& r : test) {
      images.push_back(
          data::load_image(manifest.resolve(r.image_path), config.cls_height, config.cls_width));
      truths.push_back(r.label);
    }
    std::vector<models::Label> preds;
    for (const auto& img : images) preds.push_back(models::classify(model, img).label);
    auto cls = metrics::classification_report(preds, truths);
    cls.timing = metrics::measure_fps(model, images);
    report.classification = cls;
  }
  if (with_seg) {
    const auto model = load_segmenter(config);
    std::vector<metrics::MaskPair> pairs;
    for (const auto& r : test) {
      if (r.label != models::Label::crack) continue;
      if (r.mask_path.empty()) throw ValueError("crack record without mask: " + r.image_path);
      const auto image =
          data::load_image(manifest.resolve(r.image_path), config.seg_height, config.seg_width);
      pairs.push_back({r.image_path, models::segment(model, image, config.seg_threshold),
                       data::load_mask(manifest.resolve(r.mask_path), config.seg_height,
                                       config.seg_width)});
    }
    if (!pairs.empty()) {
      report.segmentation = metrics::dataset_report(pairs, config.detection_threshold);
    }
  }

  fs::create_directories(config.output_dir);
  metrics::write_report(report, config.output_dir / "metrics.json");
  if (report.classification) {
    std::ofstream(config.output_dir / "metrics_classification.csv")
        << metrics::classification_csv(*report.classification);
  }
  if (report.segmentation) {
    std::ofstream(config.output_dir / "metrics_segmentation.csv")
        << metrics::segmentation_csv(*report.segmentation);
  }
  return report;
}

std::vector<fs::path> explain_command(const PipelineConfig& config, const fs::path& image) {
  config.validate();
  if (config.explain_taps.empty()) throw ConfigError("explain_taps is empty");
  if (image.empty()) throw ConfigError("image is not set");
  const bool seg = config.explain_model == "segmenter";
  const auto model = seg ? load_segmenter(config) : load_classifier(config);
  check_taps(model, config.explain_taps);
  const auto h = seg ? config.seg_height : config.cls_height;
  const auto w = seg ? config.seg_width : config.cls_width;
  const auto unit = data::load_image_unit(image, h, w);
  const auto input = data::standardize(unit);
  const auto stem = file_safe(image.stem().string());

  std::vector<fs::path> files;
  for (const auto& r : scorecam::explain_stages(model, input, config.explain_taps,
                                                config.explain_class, cam_options(config))) {
    for (const auto& rel : emit_heatmap(r.heatmap, unit, stem, config.overlay_alpha,
                                        config.output_dir)) {
      files.push_back(config.output_dir / rel);
    }
  }
  return files;
}

}  // namespace tunnelcrack::pipeline
