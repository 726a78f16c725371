#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include "tunnelcrack/key_value.hpp"
#include "tunnelcrack/models/densenet.hpp"
#include "tunnelcrack/models/segmenter.hpp"

namespace tunnelcrack::models {

// Model structure files use the key = value format. Required key `model`
// (classifier | segmenter); optional `preset` picks the starting point
// (classifier: densenet169 | toy, segmenter: standard | toy); every config
// field may then be overridden by its own key, e.g.
//
//   model = segmenter
//   preset = toy
//   decoder_channels = 8
//   aspp_rates = 1,2,3
using ModelConfig = std::variant<DenseNetConfig, SegmenterConfig>;

KeyValueConfig to_key_values(const DenseNetConfig& config);
KeyValueConfig to_key_values(const SegmenterConfig& config);
KeyValueConfig to_key_values(const ModelConfig& config);

ModelConfig model_config_from(const KeyValueConfig& kv);
ModelConfig load_model_config(const std::filesystem::path& path);
void save_model_config(const ModelConfig& config, const std::filesystem::path& path);

ModelGraph build_model(const ModelConfig& config);

}  // namespace tunnelcrack::models
