#include "tunnelcrack/models/model_graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

namespace tunnelcrack::models {

const char* to_string(Label label) {
  return label == Label::crack ? "crack" : "background";
}

Label label_from_string(const std::string& text) {
  if (text == "crack" || text == "1") return Label::crack;
  if (text == "background" || text == "0") return Label::background;
  throw ValueError("unknown label '" + text + "'");
}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::batch_norm: return "bn";
    case LayerKind::relu: return "relu";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::linear: return "linear";
    case LayerKind::resize: return "resize";
    case LayerKind::concat: return "concat";
  }
  return "?";
}

const char* to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::stem: return "stem";
    case BlockKind::dense_layer: return "dense-layer";
    case BlockKind::dense_block: return "dense-block";
    case BlockKind::transition: return "transition";
    case BlockKind::aspp: return "aspp";
    case BlockKind::decoder: return "decoder";
    case BlockKind::head: return "head";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Subgraph

void Subgraph::append(const Subgraph& inner) {
  layers.insert(layers.end(), inner.layers.begin(), inner.layers.end());
  params.insert(params.end(), inner.params.begin(), inner.params.end());
}

std::string Subgraph::add(LayerSpec layer) {
  layers.push_back(std::move(layer));
  return layers.back().name;
}

std::string Subgraph::add_conv(const std::string& name, const std::string& from,
                               std::int64_t in_channels, std::int64_t out_channels,
                               std::int64_t kernel, ops::ConvParams conv, bool bias) {
  if (in_channels % conv.groups != 0 || out_channels % conv.groups != 0) {
    throw ValueError("conv '" + name + "': groups must divide channel counts");
  }
  LayerSpec layer;
  layer.name = name;
  layer.kind = LayerKind::conv;
  layer.inputs = {from};
  layer.in_channels = in_channels;
  layer.out_channels = out_channels;
  layer.kernel = {kernel, kernel};
  layer.conv = conv;
  layer.params = {name + ".weight"};
  params.push_back({name + ".weight",
                    {out_channels, in_channels / conv.groups, kernel, kernel},
                    ParamInit::he_normal,
                    true});
  if (bias) {
    layer.params.push_back(name + ".bias");
    params.push_back({name + ".bias", {out_channels}, ParamInit::zeros, true});
  }
  return add(std::move(layer));
}

std::string Subgraph::add_bn(const std::string& name, const std::string& from,
                             std::int64_t channels) {
  LayerSpec layer;
  layer.name = name;
  layer.kind = LayerKind::batch_norm;
  layer.inputs = {from};
  layer.in_channels = layer.out_channels = channels;
  layer.params = {name + ".gamma", name + ".beta", name + ".running_mean",
                  name + ".running_var"};
  params.push_back({name + ".gamma", {channels}, ParamInit::ones, true});
  params.push_back({name + ".beta", {channels}, ParamInit::zeros, true});
  params.push_back({name + ".running_mean", {channels}, ParamInit::zeros, false});
  params.push_back({name + ".running_var", {channels}, ParamInit::ones, false});
  return add(std::move(layer));
}

std::string Subgraph::add_relu(const std::string& name, const std::string& from) {
  LayerSpec layer;
  layer.name = name;
  layer.kind = LayerKind::relu;
  layer.inputs = {from};
  return add(std::move(layer));
}

std::string Subgraph::add_conv_bn_relu(const std::string& name, const std::string& from,
                                       std::int64_t in_channels,
                                       std::int64_t out_channels, std::int64_t kernel,
                                       ops::ConvParams conv) {
  auto c = add_conv(name + ".conv", from, in_channels, out_channels, kernel, conv, false);
  auto b = add_bn(name + ".bn", c, out_channels);
  return add_relu(name + ".relu", b);
}

// ---------------------------------------------------------------------------
// ModelGraph: construction

void ModelGraph::append(const Subgraph& subgraph, Rng& rng) {
  for (const auto& decl : subgraph.params) {
    if (params_.count(decl.name)) {
      throw ValueError("duplicate parameter '" + decl.name + "'");
    }
    Tensor value;
    switch (decl.init) {
      case ParamInit::zeros: value = Tensor::zeros(decl.shape); break;
      case ParamInit::ones: value = Tensor::full(decl.shape, 1.0); break;
      case ParamInit::he_normal: {
        const std::int64_t fan_in = numel(decl.shape) / decl.shape.front();
        value = randn(decl.shape, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
        break;
      }
    }
    value.set_requires_grad(decl.trainable);
    params_[decl.name] = Parameter{value, decl.trainable};
  }
  for (const auto& layer : subgraph.layers) {
    if (layer.name == kInputNode || index_.count(layer.name)) {
      throw ValueError("duplicate node '" + layer.name + "'");
    }
    for (const auto& in : layer.inputs) {
      if (!has_node(in)) {
        throw ValueError("node '" + layer.name + "' consumes unknown node '" + in + "'");
      }
    }
    index_[layer.name] = layers_.size();
    layers_.push_back(layer);
  }
  blocks_.push_back({subgraph.kind, subgraph.name, subgraph.output, subgraph.out_channels});
}

void ModelGraph::add_tap(const std::string& alias, const std::string& node) {
  if (!has_node(node)) throw ValueError("tap '" + alias + "' names unknown node " + node);
  metadata_.taps.emplace_back(alias, node);
}

std::vector<Tensor> ModelGraph::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const auto& [name, p] : params_) {
    if (p.trainable) out.push_back(p.value);
  }
  return out;
}

bool ModelGraph::has_node(const std::string& name) const {
  return name == kInputNode || index_.count(name) > 0;
}

const LayerSpec& ModelGraph::layer(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown node '" + name + "'");
  return layers_[it->second];
}

const std::string& ModelGraph::output_name() const {
  if (layers_.empty()) throw ValueError("model has no layers");
  return layers_.back().name;
}

std::string ModelGraph::resolve_tap(const std::string& tap) const {
  for (const auto& [alias, node] : metadata_.taps) {
    if (alias == tap) return node;
  }
  if (has_node(tap)) return tap;
  throw ValueError("unknown tap '" + tap + "'");
}

std::vector<std::string> ModelGraph::tap_aliases() const {
  std::vector<std::string> out;
  for (const auto& [alias, node] : metadata_.taps) out.push_back(alias);
  return out;
}

void ModelGraph::validate() const {
  std::set<std::string> seen{kInputNode};
  for (const auto& layer : layers_) {
    for (const auto& in : layer.inputs) {
      if (!seen.count(in)) {
        throw ValueError("node '" + layer.name + "' consumes '" + in +
                         "' before it is defined");
      }
    }
    for (const auto& p : layer.params) {
      if (!params_.count(p)) {
        throw ValueError("node '" + layer.name + "' references missing parameter '" +
                         p + "'");
      }
    }
    seen.insert(layer.name);
  }
  for (const auto& [alias, node] : metadata_.taps) {
    if (!seen.count(node)) throw ValueError("tap '" + alias + "' is dangling");
  }
}

// ---------------------------------------------------------------------------
// Shape inference

std::map<std::string, Shape> ModelGraph::infer_shapes(const Shape& input_shape) const {
  if (input_shape.size() != 4) throw ShapeError("model input must be B x C x H x W");
  std::map<std::string, Shape> shapes{{kInputNode, input_shape}};
  for (const auto& layer : layers_) {
    const Shape& in = shapes.at(layer.inputs.front());
    Shape out = in;
    switch (layer.kind) {
      case LayerKind::conv:
        if (in[1] != layer.in_channels) {
          throw ShapeError("node '" + layer.name + "' expects " +
                           std::to_string(layer.in_channels) + " channels, got " +
                           std::to_string(in[1]));
        }
        out = {in[0], layer.out_channels,
               ops::conv_output_extent(in[2], layer.kernel[0], layer.conv.padding[0],
                                       layer.conv.dilation[0], layer.conv.stride[0]),
               ops::conv_output_extent(in[3], layer.kernel[1], layer.conv.padding[1],
                                       layer.conv.dilation[1], layer.conv.stride[1])};
        break;
      case LayerKind::batch_norm:
      case LayerKind::relu:
        break;
      case LayerKind::max_pool:
      case LayerKind::avg_pool:
        out[2] = ops::conv_output_extent(in[2], layer.pool.window[0], layer.pool.padding[0],
                                         1, layer.pool.stride[0]);
        out[3] = ops::conv_output_extent(in[3], layer.pool.window[1], layer.pool.padding[1],
                                         1, layer.pool.stride[1]);
        break;
      case LayerKind::global_avg_pool:
        out = {in[0], in[1], 1, 1};
        break;
      case LayerKind::flatten:
        out = {in[0], numel(in) / in[0]};
        break;
      case LayerKind::linear:
        out = {in[0], layer.out_channels};
        break;
      case LayerKind::resize: {
        const Shape& ref = shapes.at(layer.inputs.at(1));
        out = {in[0], in[1], ref[2], ref[3]};
        break;
      }
      case LayerKind::concat:
        out[1] = 0;
        for (const auto& name : layer.inputs) {
          const Shape& s = shapes.at(name);
          if (s[2] != in[2] || s[3] != in[3]) {
            throw ShapeError("concat '" + layer.name + "' spatial mismatch");
          }
          out[1] += s[1];
        }
        break;
    }
    shapes[layer.name] = out;
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Evaluation

const Tensor& ModelGraph::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValueError("missing parameter '" + name + "'");
  return it->second.value;
}

Tensor ModelGraph::evaluate_layer(const LayerSpec& layer, const std::vector<Tensor>& in,
                                  Mode mode) const {
  switch (layer.kind) {
    case LayerKind::conv:
      return ops::conv2d(in[0], param(layer.params[0]),
                         layer.params.size() > 1 ? param(layer.params[1]) : Tensor{},
                         layer.conv);
    case LayerKind::batch_norm: {
      ops::BatchNormOptions opt;
      opt.eps = layer.eps;
      opt.momentum = layer.momentum;
      opt.training = mode == Mode::training;
      return ops::batch_norm(in[0], param(layer.params[0]), param(layer.params[1]),
                             param(layer.params[2]), param(layer.params[3]), opt);
    }
    case LayerKind::relu: return ops::relu(in[0]);
    case LayerKind::max_pool: return ops::max_pool2d(in[0], layer.pool);
    case LayerKind::avg_pool: return ops::avg_pool2d(in[0], layer.pool);
    case LayerKind::global_avg_pool: return ops::global_avg_pool(in[0]);
    case LayerKind::flatten: return ops::flatten(in[0]);
    case LayerKind::linear:
      return ops::linear(in[0], param(layer.params[0]), param(layer.params[1]));
    case LayerKind::resize:
      return ops::bilinear_resize(in[0], in[1].dim(2), in[1].dim(3));
    case LayerKind::concat: return ops::concat(in, 1);
  }
  throw ValueError("unhandled layer kind");
}

TapResult ModelGraph::evaluate(const Tensor& input, const std::vector<std::string>& taps,
                               const std::map<std::string, Tensor>& overrides,
                               Mode mode) const {
  if (layers_.empty()) throw ValueError("model has no layers");
  if (input.rank() != 4 || input.dim(1) != metadata_.in_channels) {
    throw ShapeError("model expects B x " + std::to_string(metadata_.in_channels) +
                     " x H x W input, got " + to_string(input.shape()));
  }
  evaluations_.add(input.dim(0));
  std::vector<std::string> tap_nodes;
  for (const auto& t : taps) tap_nodes.push_back(resolve_tap(t));
  for (const auto& [name, value] : overrides) {
    if (!has_node(name)) throw ValueError("override names unknown node '" + name + "'");
  }

  // Nodes required for the output and the taps, stopping at pinned nodes.
  const std::size_t n = layers_.size();
  std::vector<char> needed(n, 0);
  std::vector<std::string> frontier = tap_nodes;
  frontier.push_back(output_name());
  while (!frontier.empty()) {
    const std::string name = std::move(frontier.back());
    frontier.pop_back();
    if (name == kInputNode || overrides.count(name)) continue;
    const std::size_t i = index_.at(name);
    if (needed[i]) continue;
    needed[i] = 1;
    for (const auto& in : layers_[i].inputs) frontier.push_back(in);
  }

  // Last consumer of each node, so inference can drop dead intermediates.
  std::unordered_map<std::string, std::size_t> last_use;
  for (std::size_t i = 0; i < n; ++i) {
    if (!needed[i]) continue;
    for (const auto& in : layers_[i].inputs) last_use[in] = i;
  }
  std::set<std::string> keep(tap_nodes.begin(), tap_nodes.end());
  keep.insert(output_name());

  std::unordered_map<std::string, Tensor> values;
  auto pinned = overrides.find(kInputNode);
  values[kInputNode] = pinned != overrides.end() ? pinned->second : input;

  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& layer = layers_[i];
    if (auto it = overrides.find(layer.name); it != overrides.end()) {
      values[layer.name] = it->second;
      continue;
    }
    if (!needed[i]) continue;
    std::vector<Tensor> in;
    in.reserve(layer.inputs.size());
    for (const auto& name : layer.inputs) in.push_back(values.at(name));
    values[layer.name] = evaluate_layer(layer, in, mode);
    for (const auto& name : layer.inputs) {
      if (last_use[name] == i && !keep.count(name)) values.erase(name);
    }
  }

  TapResult result;
  result.output = values.at(output_name());
  for (std::size_t k = 0; k < taps.size(); ++k) {
    result.taps[taps[k]] = values.at(tap_nodes[k]);
  }
  return result;
}

Tensor ModelGraph::forward(const Tensor& input) const {
  NoGradGuard guard;
  return evaluate(input, {}, {}, Mode::inference).output;
}

Tensor ModelGraph::forward_train(const Tensor& input) {
  return evaluate(input, {}, {}, Mode::training).output;
}

TapResult ModelGraph::forward_with_taps(const Tensor& input,
                                        const std::vector<std::string>& taps) const {
  NoGradGuard guard;
  return evaluate(input, taps, {}, Mode::inference);
}

Tensor ModelGraph::forward_with_overrides(
    const Tensor& input, const std::map<std::string, Tensor>& overrides) const {
  NoGradGuard guard;
  return evaluate(input, {}, overrides, Mode::inference).output;
}

std::map<std::string, Tensor> ModelGraph::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, p] : params_) out[name] = p.value.clone();
  return out;
}

void ModelGraph::restore(const std::map<std::string, Tensor>& values) {
  for (auto& [name, p] : params_) {
    auto it = values.find(name);
    if (it == values.end()) throw ValueError("restore: missing parameter '" + name + "'");
    if (it->second.shape() != p.value.shape()) {
      throw ShapeError("restore: parameter '" + name + "' has shape " +
                       to_string(it->second.shape()) + ", expected " +
                       to_string(p.value.shape()));
    }
    auto dst = p.value.mutable_data();
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace tunnelcrack::models
