#include "tunnelcrack/pipeline/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tunnelcrack/metrics.hpp"
#include "tunnelcrack/models/densenet.hpp"
#include "tunnelcrack/models/segmenter.hpp"
#include "tunnelcrack/ops.hpp"
#include "tunnelcrack/random.hpp"
#include "tunnelcrack/weights.hpp"

namespace tunnelcrack::pipeline {

using models::ModelGraph;

double LrSchedule::at(std::int64_t epoch) const {
  if (epoch < 0 || epoch >= epochs) {
    throw ValueError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(epochs) +
                     ")");
  }
  if (shape == Shape::two_phase) return epoch < period ? base : base * factor;
  return base * std::pow(factor, static_cast<double>(epoch / period));
}

void LrSchedule::validate() const {
  if (!(base > 0.0) || !(factor > 0.0)) throw ValueError("schedule rates must be positive");
  if (epochs <= 0) throw ValueError("schedule needs at least one epoch");
  if (shape == Shape::step_decay ? period <= 0 : period < 0) {
    throw ValueError("invalid schedule period");
  }
}

LrSchedule LrSchedule::classifier() { return {Shape::step_decay, 0.005, 0.1, 10, 100}; }
LrSchedule LrSchedule::segmenter() { return {Shape::two_phase, 0.001, 0.1, 50, 100}; }

double lr_schedule_classifier(std::int64_t epoch) { return LrSchedule::classifier().at(epoch); }
double lr_schedule_segmenter(std::int64_t epoch) { return LrSchedule::segmenter().at(epoch); }

Sgd::Sgd(std::vector<Tensor> params, SgdOptions options)
    : params_(std::move(params)), options_(options) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = options_.momentum * v[j] + g[j] + options_.weight_decay * w[j];
      w[j] -= lr * v[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

ClassificationSet load_classification_set(const data::SampleManifest& manifest,
                                          data::Split split, std::int64_t h, std::int64_t w) {
  ClassificationSet set;
  for (const auto& r : manifest.select(split)) {
    set.ids.push_back(r.image_path);
    set.images.push_back(data::load_image(manifest.resolve(r.image_path), h, w));
    set.labels.push_back(static_cast<int>(r.label));
  }
  return set;
}

SegmentationSet load_segmentation_set(const data::SampleManifest& manifest, data::Split split,
                                      std::int64_t h, std::int64_t w) {
  SegmentationSet set;
  for (const auto& r : manifest.select(split)) {
    if (r.label != models::Label::crack) continue;
    if (r.mask_path.empty()) throw ValueError("crack record without mask: " + r.image_path);
    set.ids.push_back(r.image_path);
    set.images.push_back(data::load_image(manifest.resolve(r.image_path), h, w));
    set.masks.push_back(data::load_mask(manifest.resolve(r.mask_path), h, w));
  }
  return set;
}

void write_loss_curve(const std::vector<std::pair<std::int64_t, double>>& rows,
                      const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw data::IoError("cannot write loss curve " + path.string());
  out << "epoch,loss\n";
  for (const auto& [e, loss] : rows) out << e << ',' << format_double(loss) << '\n';
}

std::vector<std::pair<std::int64_t, double>> read_loss_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data::IoError("cannot read loss curve " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,loss") throw ValueError("loss curve header must be 'epoch,loss'");
  std::vector<std::pair<std::int64_t, double>> rows;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ValueError("malformed loss curve row: " + line);
    rows.emplace_back(std::stoll(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  return rows;
}

double classification_set_accuracy(const ModelGraph& model, const ClassificationSet& set) {
  if (set.images.empty()) throw ValueError("empty classification set");
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    correct += static_cast<int>(models::classify(model, set.images[i]).label) == set.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(set.images.size());
}

double segmentation_set_micro_iou(const ModelGraph& model, const SegmentationSet& set,
                                  double threshold) {
  if (set.images.empty()) throw ValueError("empty segmentation set");
  metrics::ConfusionCounts total;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    total += metrics::pixel_confusion(models::segment(model, set.images[i], threshold),
                                      set.masks[i]);
  }
  return metrics::seg_scores(total).iou;
}

namespace {

// Batch assembly for one task.
struct Task {
  std::size_t size = 0;
  std::function<Tensor(const std::vector<std::size_t>&)> inputs;
  std::function<std::vector<int>(const std::vector<std::size_t>&)> targets;
};

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
}

std::vector<std::vector<std::size_t>> batches_of(const std::vector<std::size_t>& order,
                                                 std::int64_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // A lone trailing sample would leave batch norm with one value per channel.
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

double evaluation_loss(const ModelGraph& model, const Task& task, std::int64_t batch_size) {
  NoGradGuard guard;
  std::vector<std::size_t> order(task.size);
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  for (const auto& b : batches_of(order, batch_size)) {
    const auto loss = ops::cross_entropy(model.forward(task.inputs(b)), task.targets(b));
    total += loss.item() * static_cast<double>(b.size());
  }
  return total / static_cast<double>(task.size);
}

TrainResult train(ModelGraph& model, const Task& train_task, const Task& val_task,
                  const TrainOptions& options, const std::function<double()>& train_metric) {
  if (train_task.size == 0) throw ValueError("training split is empty");
  if (val_task.size == 0) throw ValueError("validation split is empty");
  if (options.epochs <= 0 || options.batch_size <= 0) {
    throw ValueError("epochs and batch_size must be positive");
  }
  options.schedule.validate();
  if (options.schedule.epochs < options.epochs) {
    throw ValueError("schedule covers fewer epochs than requested");
  }

  Sgd sgd(model.trainable_parameters(), options.sgd);
  Rng rng(options.seed);
  std::vector<std::size_t> order(train_task.size);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::map<std::string, Tensor> best;
  for (std::int64_t epoch = 0; epoch < options.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = options.schedule.at(epoch);
    shuffle(order, rng);
    double total = 0.0;
    std::size_t batch_index = 0;
    for (const auto& b : batches_of(order, options.batch_size)) {
      sgd.zero_grad();
      const auto loss = ops::cross_entropy(model.forward_train(train_task.inputs(b)),
                                           train_task.targets(b));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch " << batch_index
            << ": loss = " << value << " (lr " << stats.lr << ")";
        throw NumericError(msg.str());
      }
      loss.backward();
      sgd.step(stats.lr);
      total += value * static_cast<double>(b.size());
      ++batch_index;
    }
    sgd.zero_grad();
    stats.train_loss = total / static_cast<double>(train_task.size);
    stats.val_loss = evaluation_loss(model, val_task, options.batch_size);
    if (!std::isfinite(stats.val_loss)) {
      throw NumericError("validation loss is not finite at epoch " + std::to_string(epoch));
    }
    if (options.track_train_metric) stats.train_metric = train_metric();

    if (result.best_epoch < 0 || stats.val_loss < result.best_val_loss) {
      result.best_epoch = epoch;
      result.best_val_loss = stats.val_loss;
      best = model.snapshot();
    }
    result.history.push_back(stats);
    if (options.on_epoch) options.on_epoch(stats);
    if (options.stop_at_train_metric && stats.train_metric &&
        *stats.train_metric >= *options.stop_at_train_metric) {
      break;
    }
  }
  model.restore(best);

  std::vector<std::pair<std::int64_t, double>> train_rows;
  std::vector<std::pair<std::int64_t, double>> val_rows;
  for (const auto& s : result.history) {
    train_rows.emplace_back(s.epoch, s.train_loss);
    val_rows.emplace_back(s.epoch, s.val_loss);
  }
  if (!options.train_curve.empty()) write_loss_curve(train_rows, options.train_curve);
  if (!options.val_curve.empty()) write_loss_curve(val_rows, options.val_curve);
  if (!options.weights_path.empty()) {
    if (options.weights_path.has_parent_path()) {
      std::filesystem::create_directories(options.weights_path.parent_path());
    }
    data::save_weights(model, options.weights_path);
  }
  return result;
}

Tensor stack(const std::vector<Tensor>& items, const std::vector<std::size_t>& idx) {
  NoGradGuard guard;
  if (idx.size() == 1) return items[idx.front()];
  std::vector<Tensor> parts;
  parts.reserve(idx.size());
  for (auto i : idx) parts.push_back(items[i]);
  return ops::concat(parts, 0);
}

Task classification_task(const ClassificationSet& set) {
  if (set.images.size() != set.labels.size()) throw ValueError("images and labels differ in count");
  return {set.images.size(), [&set](const auto& idx) { return stack(set.images, idx); },
          [&set](const auto& idx) {
            std::vector<int> t;
            for (auto i : idx) t.push_back(set.labels[i]);
            return t;
          }};
}

Task segmentation_task(const SegmentationSet& set) {
  if (set.images.size() != set.masks.size()) throw ValueError("images and masks differ in count");
  return {set.images.size(), [&set](const auto& idx) { return stack(set.images, idx); },
          [&set](const auto& idx) {
            std::vector<int> t;
            for (auto i : idx) {
              for (double v : set.masks[i].data()) t.push_back(v > 0.5 ? 1 : 0);
            }
            return t;
          }};
}

}  // namespace

TrainResult train_classifier(ModelGraph& model, const ClassificationSet& train_set,
                             const ClassificationSet& val_set, const TrainOptions& options) {
  if (model.metadata().task != models::ModelTask::classification) {
    throw ValueError("train_classifier needs a classification model");
  }
  return train(model, classification_task(train_set), classification_task(val_set), options,
               [&] { return classification_set_accuracy(model, train_set); });
}

TrainResult train_segmenter(ModelGraph& model, const SegmentationSet& train_set,
                            const SegmentationSet& val_set, const TrainOptions& options) {
  if (model.metadata().task != models::ModelTask::segmentation) {
    throw ValueError("train_segmenter needs a segmentation model");
  }
  return train(model, segmentation_task(train_set), segmentation_task(val_set), options,
               [&] { return segmentation_set_micro_iou(model, train_set); });
}

TrainOptions classifier_train_options(const PipelineConfig& config) {
  TrainOptions o;
  o.epochs = config.cls_epochs;
  o.batch_size = config.cls_batch_size;
  o.schedule = {LrSchedule::Shape::step_decay, config.cls_lr, config.cls_lr_factor,
                config.cls_lr_step, config.cls_epochs};
  o.sgd = {config.momentum, config.weight_decay};
  o.seed = config.seed;
  o.weights_path = config.classifier_weights;
  o.train_curve = config.output_dir / "classifier_train_loss.csv";
  o.val_curve = config.output_dir / "classifier_val_loss.csv";
  return o;
}

TrainOptions segmenter_train_options(const PipelineConfig& config) {
  TrainOptions o;
  o.epochs = config.seg_epochs;
  o.batch_size = config.seg_batch_size;
  o.schedule = {LrSchedule::Shape::two_phase, config.seg_lr, config.seg_lr_factor,
                config.seg_lr_switch, config.seg_epochs};
  o.sgd = {config.momentum, config.weight_decay};
  o.seed = config.seed;
  o.weights_path = config.segmenter_weights;
  o.train_curve = config.output_dir / "segmenter_train_loss.csv";
  o.val_curve = config.output_dir / "segmenter_val_loss.csv";
  return o;
}

namespace {

data::SampleManifest manifest_for(const PipelineConfig& config) {
  if (config.manifest.empty()) throw ConfigError("manifest is not set");
  if (!std::filesystem::exists(config.manifest)) {
    throw ConfigError("manifest not found: " + config.manifest.string());
  }
  return data::load_manifest(config.manifest);
}

void require_output(const std::filesystem::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string(key) + " must name the output weight file");
}

}  // namespace

TrainResult train_classifier_command(const PipelineConfig& config) {
  config.validate();
  require_output(config.classifier_weights, "classifier_weights");
  const auto manifest = manifest_for(config);
  auto model = models::build_classifier(classifier_model_config(config));
  const auto train_set =
      load_classification_set(manifest, data::Split::train, config.cls_height, config.cls_width);
  const auto val_set =
      load_classification_set(manifest, data::Split::val, config.cls_height, config.cls_width);
  return train_classifier(model, train_set, val_set, classifier_train_options(config));
}

TrainResult train_segmenter_command(const PipelineConfig& config) {
  config.validate();
  require_output(config.segmenter_weights, "segmenter_weights");
  const auto manifest = manifest_for(config);
  manifest.require_masks_for_cracks();
  auto model = models::build_segmenter(segmenter_model_config(config));
  const auto train_set =
      load_segmentation_set(manifest, data::Split::train, config.seg_height, config.seg_width);
  const auto val_set =
      load_segmentation_set(manifest, data::Split::val, config.seg_height, config.seg_width);
  return train_segmenter(model, train_set, val_set, segmenter_train_options(config));
}

}  // namespace tunnelcrack::pipeline
