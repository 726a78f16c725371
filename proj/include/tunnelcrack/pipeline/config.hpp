#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tunnelcrack/key_value.hpp"
#include "tunnelcrack/models/model_config.hpp"
#include "tunnelcrack/tensor.hpp"

namespace tunnelcrack::pipeline {

// Bad configuration or usage; the CLI maps it to exit status 1.
class ConfigError : public ValueError {
 public:
  using ValueError::ValueError;
};

// Flat settings shared by every subcommand. Model configs are either a
// preset name or a path to a model config file.
struct PipelineConfig {
  std::string classifier_config = "densenet169";
  std::filesystem::path classifier_weights;
  std::string segmenter_config = "standard";
  std::filesystem::path segmenter_weights;
  std::int64_t cls_height = 224;
  std::int64_t cls_width = 224;
  std::int64_t seg_height = 384;
  std::int64_t seg_width = 512;

  std::filesystem::path manifest;
  std::filesystem::path output_dir = "out";
  std::filesystem::path image;

  double seg_threshold = 0.5;
  double detection_threshold = 0.5;

  std::vector<std::string> explain_taps;
  std::string explain_model = "segmenter";
  std::int64_t explain_class = 1;
  double overlay_alpha = 0.5;
  std::int64_t mask_batch = 8;

  std::int64_t cls_epochs = 100;
  std::int64_t cls_batch_size = 4;
  double cls_lr = 0.005;
  double cls_lr_factor = 0.1;
  std::int64_t cls_lr_step = 10;
  std::int64_t seg_epochs = 100;
  std::int64_t seg_batch_size = 8;
  double seg_lr = 0.001;
  double seg_lr_factor = 0.1;
  std::int64_t seg_lr_switch = 50;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 42;

  std::array<double, 3> split_ratios{0.7, 0.2, 0.1};
  std::filesystem::path split_output;
  std::int64_t synth_crack = 5;
  std::int64_t synth_background = 5;
  std::int64_t synth_height = 64;
  std::int64_t synth_width = 64;

  // Sizes, thresholds, ranges. File existence is checked where files are used.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

// Every accepted key, in documentation order. Each is also a `--name` flag.
const std::vector<ConfigKey>& config_keys();

PipelineConfig pipeline_config_from(const KeyValueConfig& kv);
KeyValueConfig to_key_values(const PipelineConfig& config);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// Resolves a preset name or config file and applies the pipeline input size.
models::DenseNetConfig classifier_model_config(const PipelineConfig& config);
models::SegmenterConfig segmenter_model_config(const PipelineConfig& config);

// Builds the model and loads its weights; both weight paths must exist.
models::ModelGraph load_classifier(const PipelineConfig& config);
models::ModelGraph load_segmenter(const PipelineConfig& config);

}  // namespace tunnelcrack::pipeline
