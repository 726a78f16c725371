#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tunnelcrack/ops.hpp"
#include "tunnelcrack/random.hpp"
#include "tunnelcrack/tensor.hpp"

namespace tunnelcrack::models {

using tunnelcrack::to_string;

// Name of the graph's image input node.
inline constexpr const char* kInputNode = "input";

// Class index convention shared by both networks.
enum class Label : int { background = 0, crack = 1 };

const char* to_string(Label label);
Label label_from_string(const std::string& text);

enum class LayerKind {
  conv,
  batch_norm,
  relu,
  max_pool,
  avg_pool,
  global_avg_pool,
  flatten,
  linear,
  resize,  // bilinear, to the spatial size of inputs[1]
  concat,  // along channels
};

const char* to_string(LayerKind kind);

// One primitive node. Which fields are meaningful depends on `kind`:
//   conv        params {weight[, bias]}, kernel, conv, in/out_channels
//   batch_norm  params {gamma, beta, running_mean, running_var}, eps, momentum
//   max/avg_pool pool
//   linear      params {weight, bias}
//   resize      inputs {source, reference}
//   concat      inputs {a, b, ...}
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;
  std::vector<std::string> params;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  ops::Pair kernel{1, 1};
  ops::ConvParams conv;
  ops::PoolParams pool;
  double eps = 1e-5;
  double momentum = 0.1;
};

enum class ParamInit { he_normal, zeros, ones };

struct ParamDecl {
  std::string name;
  Shape shape;
  ParamInit init = ParamInit::he_normal;
  bool trainable = true;
};

enum class BlockKind { stem, dense_layer, dense_block, transition, aspp, decoder, head };

const char* to_string(BlockKind kind);

// A composite unit produced by one of the builders: primitive layers, the
// parameters they reference, and the channel bookkeeping at its boundary.
struct Subgraph {
  BlockKind kind = BlockKind::dense_block;
  std::string name;
  std::string input;
  std::string output;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::vector<LayerSpec> layers;
  std::vector<ParamDecl> params;

  void append(const Subgraph& inner);

  // Layer helpers; each appends one node and returns its name.
  std::string add(LayerSpec layer);
  std::string add_conv(const std::string& name, const std::string& from,
                       std::int64_t in_channels, std::int64_t out_channels,
                       std::int64_t kernel, ops::ConvParams conv, bool bias);
  std::string add_bn(const std::string& name, const std::string& from,
                     std::int64_t channels);
  std::string add_relu(const std::string& name, const std::string& from);
  // conv -> bn -> relu; returns the relu node.
  std::string add_conv_bn_relu(const std::string& name, const std::string& from,
                               std::int64_t in_channels, std::int64_t out_channels,
                               std::int64_t kernel, ops::ConvParams conv);
};

struct BlockInfo {
  BlockKind kind;
  std::string name;
  std::string output;
  std::int64_t out_channels;
};

enum class ModelTask { classification, segmentation };

struct ModelMetadata {
  ModelTask task = ModelTask::classification;
  std::int64_t in_channels = 3;
  std::int64_t input_height = 0;
  std::int64_t input_width = 0;
  std::int64_t num_classes = 2;
  // Tap alias -> node name, in registration order.
  std::vector<std::pair<std::string, std::string>> taps;
};

enum class Mode { inference, training };

struct Parameter {
  Tensor value;
  bool trainable = true;
};

using ParameterStore = std::map<std::string, Parameter>;

struct TapResult {
  Tensor output;
  std::map<std::string, Tensor> taps;
};

// Copyable atomic tally of evaluated images.
class EvalCounter {
 public:
  EvalCounter() = default;
  EvalCounter(const EvalCounter& o) : value_(o.value_.load()) {}
  EvalCounter& operator=(const EvalCounter& o) {
    value_ = o.value_.load();
    return *this;
  }
  void add(std::int64_t n) const { value_ += n; }
  std::int64_t get() const { return value_.load(); }
  void reset() const { value_ = 0; }

 private:
  mutable std::atomic<std::int64_t> value_{0};
};

// Ordered layer list + named parameters. Layers are stored in a valid
// evaluation order; the last layer is the model output.
class ModelGraph {
 public:
  ModelGraph() = default;
  explicit ModelGraph(ModelMetadata metadata) : metadata_(std::move(metadata)) {}

  // Adds the subgraph's layers and instantiates its parameters. He-normal
  // tensors are drawn from `rng` in declaration order.
  void append(const Subgraph& subgraph, Rng& rng);
  void add_tap(const std::string& alias, const std::string& node);

  const ModelMetadata& metadata() const { return metadata_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<BlockInfo>& blocks() const { return blocks_; }
  const ParameterStore& parameters() const { return params_; }
  ParameterStore& parameters() { return params_; }
  std::vector<Tensor> trainable_parameters() const;

  bool has_node(const std::string& name) const;
  const LayerSpec& layer(const std::string& name) const;
  const std::string& output_name() const;
  // Resolves a tap alias or a raw node name; throws ValueError when unknown.
  std::string resolve_tap(const std::string& tap) const;
  std::vector<std::string> tap_aliases() const;

  // Checks parameter references, evaluation order and tap targets.
  void validate() const;

  // Shape of every node for a given input shape, without evaluating values.
  std::map<std::string, Shape> infer_shapes(const Shape& input_shape) const;

  Tensor forward(const Tensor& input) const;
  // Training mode uses batch statistics and updates running buffers.
  Tensor forward_train(const Tensor& input);

  TapResult forward_with_taps(const Tensor& input,
                              const std::vector<std::string>& taps) const;

  // Evaluates the output with the given nodes pinned to supplied values.
  // Only nodes the output still depends on are computed.
  Tensor forward_with_overrides(const Tensor& input,
                                const std::map<std::string, Tensor>& overrides) const;

  // Number of images pushed through the network (a batch of B counts B).
  std::int64_t evaluations() const { return evaluations_.get(); }
  void reset_evaluations() const { evaluations_.reset(); }

  // Copies every parameter value (deep copy), for snapshot/restore.
  std::map<std::string, Tensor> snapshot() const;
  void restore(const std::map<std::string, Tensor>& values);

 private:
  TapResult evaluate(const Tensor& input, const std::vector<std::string>& taps,
                     const std::map<std::string, Tensor>& overrides, Mode mode) const;
  Tensor evaluate_layer(const LayerSpec& layer, const std::vector<Tensor>& inputs,
                        Mode mode) const;
  const Tensor& param(const std::string& name) const;

  ModelMetadata metadata_;
  std::vector<LayerSpec> layers_;
  std::vector<BlockInfo> blocks_;
  ParameterStore params_;
  std::map<std::string, std::size_t> index_;
  EvalCounter evaluations_;
};

}  // namespace tunnelcrack::models
