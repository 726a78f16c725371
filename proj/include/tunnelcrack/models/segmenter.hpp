#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tunnelcrack/models/model_graph.hpp"

namespace tunnelcrack::models {

struct AsppOptions {
  std::string name = "aspp";
  std::string input = kInputNode;
  // Depthwise 3x3 + pointwise 1x1 in the atrous branches.
  bool separable = true;
};

// Branches: 1x1 conv, one 3x3 atrous conv per rate, and image pooling
// (global pool, 1x1 conv, resize back). Concatenated, then projected by 1x1.
Subgraph build_aspp(std::int64_t in_channels, const std::vector<std::int64_t>& rates,
                    std::int64_t out_channels, const AsppOptions& options = {});

struct SegmenterConfig {
  std::string backbone = "dense";
  std::int64_t in_channels = 3;
  std::int64_t stem_channels = 64;
  std::int64_t stem_kernel = 7;
  std::int64_t stem_stride = 2;
  bool stem_pool = true;
  std::int64_t growth_rate = 32;
  std::vector<std::int64_t> block_sizes{6, 12, 24};
  std::int64_t bottleneck = 4;
  double compression = 0.5;
  std::int64_t output_stride = 16;
  std::vector<std::int64_t> aspp_rates{6, 12, 18};
  std::int64_t aspp_channels = 256;
  // 0 taps the stem output, i taps dense block i.
  std::int64_t low_level_stage = 1;
  std::int64_t low_level_channels = 48;
  std::int64_t decoder_channels = 256;
  bool separable = true;
  std::int64_t num_classes = 2;
  std::int64_t input_height = 384;
  std::int64_t input_width = 512;
  std::uint64_t seed = 42;

  static SegmenterConfig standard();
  // Small full-resolution variant used for desk-scale training.
  static SegmenterConfig toy();

  void validate() const;
};

// Dense-style encoder -> ASPP -> upsample to low-level resolution -> concat with
// projected low-level features -> two 3x3 convs -> 1x1 to classes -> upsample.
// Taps: stem, blockN, transitionN, aspp, decoder.low, decoder.high,
// decoder.concat, decoder.out, logits.
ModelGraph build_segmenter(const SegmenterConfig& config);

// Output stride reached after each stage; index 0 is the stem.
std::vector<std::int64_t> stage_strides(const SegmenterConfig& config);

// Crack-class probability map, H x W.
Tensor crack_probability(const ModelGraph& model, const Tensor& image);

// Binary H x W mask: 1 where the crack probability strictly exceeds threshold.
Tensor segment(const ModelGraph& model, const Tensor& image, double threshold = 0.5);

}  // namespace tunnelcrack::models
