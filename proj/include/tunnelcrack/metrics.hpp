#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tunnelcrack/models/model_graph.hpp"
#include "tunnelcrack/tensor.hpp"

namespace tunnelcrack::metrics {

using models::Label;

// Crack is the positive class.
struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

struct SegScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double iou = 0.0;

  bool operator==(const SegScores&) const = default;
};

struct TimingStats {
  std::int64_t count = 0;
  double seconds = 0.0;
  double fps = 0.0;

  static TimingStats from(std::int64_t count, double seconds);
  bool operator==(const TimingStats&) const = default;
};

double classification_accuracy(std::span<const Label> preds, std::span<const Label> truths);
ConfusionCounts classification_confusion(std::span<const Label> preds,
                                         std::span<const Label> truths);

// One untimed warm-up call on the first image, then every image once in order.
TimingStats measure_fps(const std::function<void(const Tensor&)>& infer,
                        const std::vector<Tensor>& images);
// Model forward time only.
TimingStats measure_fps(const models::ModelGraph& model, const std::vector<Tensor>& images);

// Masks hold only 0 and 1 and have equal shapes.
ConfusionCounts pixel_confusion(const Tensor& pred, const Tensor& gt);

// 0/0 is 1 when both masks are empty and 0 otherwise.
SegScores seg_scores(const ConfusionCounts& counts);

// Strict: detected only when iou exceeds d.
bool detect_decision(double iou, double d = 0.5);

struct ImageScore {
  std::string id;
  ConfusionCounts counts;
  SegScores scores;
  bool detected = false;

  bool operator==(const ImageScore&) const = default;
};

struct SegmentationReport {
  std::int64_t images = 0;
  double detection_threshold = 0.5;
  ConfusionCounts total;
  SegScores micro;  // from the summed counts
  SegScores macro;  // mean of per-image scores
  double detection_rate = 0.0;
  std::vector<ImageScore> per_image;

  bool operator==(const SegmentationReport&) const = default;
};

struct MaskPair {
  std::string id;
  Tensor pred;
  Tensor gt;
};

SegmentationReport dataset_report(const std::vector<MaskPair>& pairs, double d = 0.5);
// Aggregates already-counted images.
SegmentationReport aggregate_report(std::vector<ImageScore> per_image, double d = 0.5);
ImageScore score_image(const std::string& id, const ConfusionCounts& counts, double d = 0.5);

struct ClassificationReport {
  std::int64_t images = 0;
  std::int64_t background_images = 0;
  std::int64_t crack_images = 0;
  ConfusionCounts counts;
  double accuracy = 0.0;
  std::optional<TimingStats> timing;

  bool operator==(const ClassificationReport&) const = default;
};

ClassificationReport classification_report(std::span<const Label> preds,
                                           std::span<const Label> truths);

struct MetricsReport {
  std::optional<ClassificationReport> classification;
  std::optional<SegmentationReport> segmentation;

  bool operator==(const MetricsReport&) const = default;
};

nlohmann::json to_json(const ConfusionCounts& c);
nlohmann::json to_json(const SegScores& s);
nlohmann::json to_json(const TimingStats& t);
nlohmann::json to_json(const SegmentationReport& r);
nlohmann::json to_json(const ClassificationReport& r);
nlohmann::json to_json(const MetricsReport& r);

ConfusionCounts counts_from_json(const nlohmann::json& j);
SegScores scores_from_json(const nlohmann::json& j);
TimingStats timing_from_json(const nlohmann::json& j);
SegmentationReport segmentation_from_json(const nlohmann::json& j);
ClassificationReport classification_from_json(const nlohmann::json& j);
MetricsReport report_from_json(const nlohmann::json& j);

// Columns: scope,image,tp,fp,fn,tn,precision,recall,f1,iou,detected with scope
// one of image / micro / macro.
std::string segmentation_csv(const SegmentationReport& r);
// Header row plus one summary row.
std::string classification_csv(const ClassificationReport& r);

void write_report(const MetricsReport& r, const std::filesystem::path& json_path);
MetricsReport read_report(const std::filesystem::path& json_path);

}  // namespace tunnelcrack::metrics
