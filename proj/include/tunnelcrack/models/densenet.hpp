#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tunnelcrack/models/model_graph.hpp"

namespace tunnelcrack::models {

struct DenseLayerOptions {
  std::string name = "layer";
  std::string input = kInputNode;
  // Bottleneck 1x1 width as a multiple of the growth rate; 0 disables it.
  std::int64_t bottleneck = 4;
  std::int64_t dilation = 1;
};

struct DenseBlockOptions {
  std::string name = "block";
  std::string input = kInputNode;
  std::int64_t bottleneck = 4;
  std::int64_t dilation = 1;
};

struct TransitionOptions {
  std::string name = "transition";
  std::string input = kInputNode;
  // Skipping the pool keeps the spatial extent (used to hold an output stride).
  bool pool = true;
};

// BN-ReLU-Conv1x1 (bottleneck) -> BN-ReLU-Conv3x3 producing `growth_rate` maps.
Subgraph build_dense_layer(std::int64_t in_channels, std::int64_t growth_rate,
                           const DenseLayerOptions& options = {});

// Layer i sees concat(block input, outputs of layers 1..i-1). The block output
// is the concatenation of everything: in_channels + num_layers * growth_rate.
Subgraph build_dense_block(std::int64_t in_channels, std::int64_t num_layers,
                           std::int64_t growth_rate, const DenseBlockOptions& options = {});

// BN-ReLU-Conv1x1 to floor(in * compression) channels, then 2x2/2 average pool.
Subgraph build_transition(std::int64_t in_channels, double compression,
                          const TransitionOptions& options = {});

std::int64_t transition_channels(std::int64_t in_channels, double compression);

struct DenseNetConfig {
  std::int64_t growth_rate = 32;
  std::vector<std::int64_t> block_sizes{6, 12, 32, 32};
  std::int64_t initial_channels = 64;
  double compression = 0.5;
  std::int64_t bottleneck = 4;
  std::int64_t num_classes = 2;
  std::int64_t in_channels = 3;
  std::int64_t input_height = 224;
  std::int64_t input_width = 224;
  std::uint64_t seed = 42;

  static DenseNetConfig densenet169();
  static DenseNetConfig toy();

  void validate() const;
};

// Stem, dense blocks separated by transitions, then bn/relu, global pool and a
// linear layer to two logits. Registered taps: stem, blockN, transitionN,
// features (final relu), logits.
ModelGraph build_classifier(const DenseNetConfig& config);

struct Classification {
  std::array<double, 2> probs{};
  Label label = Label::crack;
};

// Decides from logits; equal scores go to crack.
Label decide_label(double background_logit, double crack_logit);

// `image` is 1 x C x H x W at the model's input size.
Classification classify(const ModelGraph& model, const Tensor& image);

}  // namespace tunnelcrack::models
