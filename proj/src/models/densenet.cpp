#include "tunnelcrack/models/densenet.hpp"

#include <cmath>

namespace tunnelcrack::models {

namespace {

ops::ConvParams conv3x3(std::int64_t dilation) {
  ops::ConvParams p;
  p.padding = {dilation, dilation};
  p.dilation = {dilation, dilation};
  return p;
}

void require_positive(std::int64_t value, const char* what) {
  if (value <= 0) throw ValueError(std::string(what) + " must be positive");
}

}  // namespace

Subgraph build_dense_layer(std::int64_t in_channels, std::int64_t growth_rate,
                           const DenseLayerOptions& options) {
  require_positive(in_channels, "dense layer input channels");
  require_positive(growth_rate, "growth rate");
  if (options.bottleneck < 0) throw ValueError("bottleneck width must be >= 0");
  require_positive(options.dilation, "dilation");

  Subgraph sub;
  sub.kind = BlockKind::dense_layer;
  sub.name = options.name;
  sub.input = options.input;
  sub.in_channels = in_channels;
  sub.out_channels = growth_rate;

  const std::string& n = options.name;
  std::string x = sub.add_bn(n + ".bn1", options.input, in_channels);
  x = sub.add_relu(n + ".relu1", x);
  std::int64_t ch = in_channels;
  if (options.bottleneck > 0) {
    ch = options.bottleneck * growth_rate;
    x = sub.add_conv(n + ".conv1", x, in_channels, ch, 1, {}, false);
    x = sub.add_bn(n + ".bn2", x, ch);
    x = sub.add_relu(n + ".relu2", x);
  }
  sub.output = sub.add_conv(n + ".conv2", x, ch, growth_rate, 3,
                            conv3x3(options.dilation), false);
  return sub;
}

Subgraph build_dense_block(std::int64_t in_channels, std::int64_t num_layers,
                           std::int64_t growth_rate, const DenseBlockOptions& options) {
  require_positive(in_channels, "dense block input channels");
  require_positive(growth_rate, "growth rate");
  if (num_layers < 0) throw ValueError("dense block layer count must be >= 0");

  Subgraph sub;
  sub.kind = BlockKind::dense_block;
  sub.name = options.name;
  sub.input = options.input;
  sub.in_channels = in_channels;
  sub.out_channels = in_channels + num_layers * growth_rate;

  std::vector<std::string> features{options.input};
  std::int64_t ch = in_channels;
  for (std::int64_t i = 1; i <= num_layers; ++i) {
    std::string layer_input = options.input;
    if (features.size() > 1) {
      LayerSpec cat;
      cat.name = options.name + ".concat" + std::to_string(i);
      cat.kind = LayerKind::concat;
      cat.inputs = features;
      cat.in_channels = cat.out_channels = ch;
      layer_input = sub.add(std::move(cat));
    }
    DenseLayerOptions lo;
    lo.name = options.name + ".layer" + std::to_string(i);
    lo.input = layer_input;
    lo.bottleneck = options.bottleneck;
    lo.dilation = options.dilation;
    Subgraph layer = build_dense_layer(ch, growth_rate, lo);
    sub.append(layer);
    features.push_back(layer.output);
    ch += growth_rate;
  }

  if (num_layers == 0) {
    sub.output = options.input;
  } else {
    LayerSpec cat;
    cat.name = options.name + ".out";
    cat.kind = LayerKind::concat;
    cat.inputs = features;
    cat.in_channels = cat.out_channels = ch;
    sub.output = sub.add(std::move(cat));
  }
  return sub;
}

std::int64_t transition_channels(std::int64_t in_channels, double compression) {
  if (!(compression > 0.0 && compression <= 1.0)) {
    throw ValueError("compression must lie in (0, 1]");
  }
  const auto out = static_cast<std::int64_t>(
      std::floor(static_cast<double>(in_channels) * compression + 1e-9));
  if (out < 1) throw ValueError("transition would produce zero channels");
  return out;
}

Subgraph build_transition(std::int64_t in_channels, double compression,
                          const TransitionOptions& options) {
  require_positive(in_channels, "transition input channels");
  const std::int64_t out = transition_channels(in_channels, compression);

  Subgraph sub;
  sub.kind = BlockKind::transition;
  sub.name = options.name;
  sub.input = options.input;
  sub.in_channels = in_channels;
  sub.out_channels = out;

  const std::string& n = options.name;
  std::string x = sub.add_bn(n + ".bn", options.input, in_channels);
  x = sub.add_relu(n + ".relu", x);
  x = sub.add_conv(n + ".conv", x, in_channels, out, 1, {}, false);
  if (options.pool) {
    LayerSpec pool;
    pool.name = n + ".pool";
    pool.kind = LayerKind::avg_pool;
    pool.inputs = {x};
    pool.in_channels = pool.out_channels = out;
    pool.pool = ops::PoolParams{{2, 2}, {2, 2}, {0, 0}};
    x = sub.add(std::move(pool));
  }
  sub.output = x;
  return sub;
}

DenseNetConfig DenseNetConfig::densenet169() { return DenseNetConfig{}; }

DenseNetConfig DenseNetConfig::toy() {
  DenseNetConfig c;
  c.growth_rate = 4;
  c.block_sizes = {2, 2, 2, 2};
  c.initial_channels = 8;
  c.bottleneck = 2;
  c.input_height = 32;
  c.input_width = 32;
  return c;
}

void DenseNetConfig::validate() const {
  require_positive(growth_rate, "growth_rate");
  require_positive(initial_channels, "initial_channels");
  require_positive(in_channels, "in_channels");
  require_positive(input_height, "input_height");
  require_positive(input_width, "input_width");
  if (block_sizes.empty()) throw ValueError("block_sizes must not be empty");
  for (auto b : block_sizes) require_positive(b, "every block size");
  if (!(compression > 0.0 && compression <= 1.0)) {
    throw ValueError("compression must lie in (0, 1]");
  }
  if (bottleneck < 0) throw ValueError("bottleneck must be >= 0");
  if (num_classes != 2) throw ValueError("the classifier has exactly 2 classes");
}

ModelGraph build_classifier(const DenseNetConfig& config) {
  config.validate();
  ModelMetadata meta;
  meta.task = ModelTask::classification;
  meta.in_channels = config.in_channels;
  meta.input_height = config.input_height;
  meta.input_width = config.input_width;
  meta.num_classes = config.num_classes;
  ModelGraph graph(meta);
  Rng rng(config.seed);

  Subgraph stem;
  stem.kind = BlockKind::stem;
  stem.name = "stem";
  stem.input = kInputNode;
  stem.in_channels = config.in_channels;
  stem.out_channels = config.initial_channels;
  {
    ops::ConvParams p;
    p.stride = {2, 2};
    p.padding = {3, 3};
    std::string x = stem.add_conv_bn_relu("stem", kInputNode, config.in_channels,
                                          config.initial_channels, 7, p);
    LayerSpec pool;
    pool.name = "stem.pool";
    pool.kind = LayerKind::max_pool;
    pool.inputs = {x};
    pool.in_channels = pool.out_channels = config.initial_channels;
    pool.pool = ops::PoolParams{{3, 3}, {2, 2}, {1, 1}};
    stem.output = stem.add(std::move(pool));
  }
  graph.append(stem, rng);
  graph.add_tap("stem", stem.output);

  std::string x = stem.output;
  std::int64_t ch = config.initial_channels;
  const std::size_t nblocks = config.block_sizes.size();
  for (std::size_t i = 0; i < nblocks; ++i) {
    const std::string idx = std::to_string(i + 1);
    DenseBlockOptions bo;
    bo.name = "block" + idx;
    bo.input = x;
    bo.bottleneck = config.bottleneck;
    Subgraph block = build_dense_block(ch, config.block_sizes[i], config.growth_rate, bo);
    graph.append(block, rng);
    graph.add_tap(bo.name, block.output);
    x = block.output;
    ch = block.out_channels;
    if (i + 1 < nblocks) {
      TransitionOptions to;
      to.name = "transition" + idx;
      to.input = x;
      Subgraph trans = build_transition(ch, config.compression, to);
      graph.append(trans, rng);
      graph.add_tap(to.name, trans.output);
      x = trans.output;
      ch = trans.out_channels;
    }
  }

  Subgraph head;
  head.kind = BlockKind::head;
  head.name = "head";
  head.input = x;
  head.in_channels = ch;
  head.out_channels = config.num_classes;
  std::string features = head.add_relu("head.relu", head.add_bn("head.bn", x, ch));
  LayerSpec gap;
  gap.name = "head.pool";
  gap.kind = LayerKind::global_avg_pool;
  gap.inputs = {features};
  gap.in_channels = gap.out_channels = ch;
  std::string pooled = head.add(std::move(gap));
  LayerSpec flat;
  flat.name = "head.flatten";
  flat.kind = LayerKind::flatten;
  flat.inputs = {pooled};
  flat.in_channels = flat.out_channels = ch;
  std::string flattened = head.add(std::move(flat));
  LayerSpec fc;
  fc.name = "classifier";
  fc.kind = LayerKind::linear;
  fc.inputs = {flattened};
  fc.in_channels = ch;
  fc.out_channels = config.num_classes;
  fc.params = {"classifier.weight", "classifier.bias"};
  head.params.push_back({"classifier.weight", {config.num_classes, ch},
                         ParamInit::he_normal, true});
  head.params.push_back({"classifier.bias", {config.num_classes}, ParamInit::zeros, true});
  head.output = head.add(std::move(fc));
  graph.append(head, rng);
  graph.add_tap("features", features);
  graph.add_tap("logits", head.output);

  graph.validate();
  graph.infer_shapes({1, config.in_channels, config.input_height, config.input_width});
  return graph;
}

Label decide_label(double background_logit, double crack_logit) {
  return crack_logit >= background_logit ? Label::crack : Label::background;
}

Classification classify(const ModelGraph& model, const Tensor& image) {
  const auto& meta = model.metadata();
  if (meta.task != ModelTask::classification) {
    throw ValueError("classify needs a classification model");
  }
  const Shape expected{1, meta.in_channels, meta.input_height, meta.input_width};
  if (image.shape() != expected) {
    throw ShapeError("classify: image shape " + to_string(image.shape()) +
                     " does not match model input " + to_string(expected));
  }
  const Tensor logits = model.forward(image);
  const Tensor probs = ops::softmax(logits, 1);
  Classification out;
  out.probs = {probs.data()[0], probs.data()[1]};
  out.label = decide_label(logits.data()[0], logits.data()[1]);
  return out;
}

}  // namespace tunnelcrack::models
