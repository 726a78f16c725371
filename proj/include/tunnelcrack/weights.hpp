#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tunnelcrack/models/model_graph.hpp"
#include "tunnelcrack/tensor.hpp"

namespace tunnelcrack::data {

// Weight bundle layout:
//
//   "NWB1"                      4 bytes
//   header length               u64, little-endian
//   header                      JSON: {"format_version": 1,
//                                      "tensors": [{"name", "shape", "dtype",
//                                                   "offset", "nbytes"}, ...]}
//   payload                     float64 values, little-endian, tensors back to
//                               back in header order; offsets are relative to
//                               the payload start
inline constexpr char kBundleMagic[4] = {'N', 'W', 'B', '1'};
inline constexpr int kBundleVersion = 1;

using NamedTensors = std::map<std::string, Tensor>;

std::vector<std::uint8_t> encode_bundle(const NamedTensors& tensors);
NamedTensors decode_bundle(std::span<const std::uint8_t> bytes);

void save_bundle(const NamedTensors& tensors, const std::filesystem::path& path);
NamedTensors load_bundle(const std::filesystem::path& path);

void save_weights(const models::ModelGraph& model, const std::filesystem::path& path);
// Requires exactly the model's parameter names and shapes.
void load_weights(models::ModelGraph& model, const std::filesystem::path& path);
void load_weights(models::ModelGraph& model, const NamedTensors& tensors);

}  // namespace tunnelcrack::data
