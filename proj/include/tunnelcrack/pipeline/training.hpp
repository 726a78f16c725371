#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tunnelcrack/data.hpp"
#include "tunnelcrack/models/model_graph.hpp"
#include "tunnelcrack/pipeline/config.hpp"
#include "tunnelcrack/tensor.hpp"

namespace tunnelcrack::pipeline {

// ---------------------------------------------------------------------------
// Learning-rate schedules

struct LrSchedule {
  enum class Shape {
    step_decay,  // base * factor^floor(epoch / period)
    two_phase,   // base before `period`, base * factor from then on
  };
  Shape shape = Shape::step_decay;
  double base = 0.005;
  double factor = 0.1;
  std::int64_t period = 10;
  std::int64_t epochs = 100;

  // Throws ValueError outside [0, epochs).
  double at(std::int64_t epoch) const;
  void validate() const;

  static LrSchedule classifier();
  static LrSchedule segmenter();
};

// The fixed 100-epoch schedules.
double lr_schedule_classifier(std::int64_t epoch);
double lr_schedule_segmenter(std::int64_t epoch);

// ---------------------------------------------------------------------------
// Optimizer

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// v = momentum * v + (g + weight_decay * p);  p -= lr * v
class Sgd {
 public:
  explicit Sgd(std::vector<Tensor> params, SgdOptions options = {});
  void step(double lr);
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdOptions options_;
};

// ---------------------------------------------------------------------------
// In-memory training sets

struct ClassificationSet {
  std::vector<std::string> ids;
  std::vector<Tensor> images;  // 1 x 3 x H x W, standardized
  std::vector<int> labels;
};

struct SegmentationSet {
  std::vector<std::string> ids;
  std::vector<Tensor> images;
  std::vector<Tensor> masks;  // H x W of {0,1}
};

ClassificationSet load_classification_set(const data::SampleManifest& manifest,
                                          data::Split split, std::int64_t h, std::int64_t w);
// Crack records only; each must carry a mask.
SegmentationSet load_segmentation_set(const data::SampleManifest& manifest, data::Split split,
                                      std::int64_t h, std::int64_t w);

// ---------------------------------------------------------------------------
// Training

struct EpochStats {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  // Accuracy (classifier) or micro-IoU (segmenter) on the training set in
  // inference mode; only filled when TrainOptions::track_train_metric is set.
  std::optional<double> train_metric;
};

struct TrainOptions {
  std::int64_t epochs = 100;
  std::int64_t batch_size = 4;
  LrSchedule schedule = LrSchedule::classifier();
  SgdOptions sgd;
  std::uint64_t seed = 42;
  bool track_train_metric = false;
  // Stops once the tracked training metric reaches this value.
  std::optional<double> stop_at_train_metric;
  std::filesystem::path weights_path;  // best-validation weights; empty skips
  std::filesystem::path train_curve;   // epoch,loss; empty skips
  std::filesystem::path val_curve;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::int64_t best_epoch = -1;
  double best_val_loss = 0.0;
};

// Mini-batch SGD on cross-entropy. After training the model holds the
// weights of the epoch with the lowest validation loss. A non-finite loss
// throws NumericError.
TrainResult train_classifier(models::ModelGraph& model, const ClassificationSet& train,
                             const ClassificationSet& val, const TrainOptions& options);
TrainResult train_segmenter(models::ModelGraph& model, const SegmentationSet& train,
                            const SegmentationSet& val, const TrainOptions& options);

void write_loss_curve(const std::vector<std::pair<std::int64_t, double>>& rows,
                      const std::filesystem::path& path);
std::vector<std::pair<std::int64_t, double>> read_loss_curve(const std::filesystem::path& path);

double classification_set_accuracy(const models::ModelGraph& model, const ClassificationSet& set);
double segmentation_set_micro_iou(const models::ModelGraph& model, const SegmentationSet& set,
                                  double threshold = 0.5);

// Options for the train-cls / train-seg commands, derived from the config.
TrainOptions classifier_train_options(const PipelineConfig& config);
TrainOptions segmenter_train_options(const PipelineConfig& config);

// Command entry points: read the manifest, train, write weights and curves.
TrainResult train_classifier_command(const PipelineConfig& config);
TrainResult train_segmenter_command(const PipelineConfig& config);

}  // namespace tunnelcrack::pipeline
