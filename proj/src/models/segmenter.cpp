#include "tunnelcrack/models/segmenter.hpp"

#include <set>

#include "tunnelcrack/models/densenet.hpp"

namespace tunnelcrack::models {

namespace {

void require_positive(std::int64_t value, const char* what) {
  if (value <= 0) throw ValueError(std::string(what) + " must be positive");
}

ops::ConvParams atrous(std::int64_t rate, std::int64_t groups = 1) {
  ops::ConvParams p;
  p.padding = {rate, rate};
  p.dilation = {rate, rate};
  p.groups = groups;
  return p;
}

// 3x3 conv-bn-relu, or depthwise 3x3 + pointwise 1x1 when separable.
std::string add_conv3x3_unit(Subgraph& sub, const std::string& name, const std::string& from,
                             std::int64_t in, std::int64_t out, std::int64_t rate,
                             bool separable) {
  if (!separable) return sub.add_conv_bn_relu(name, from, in, out, 3, atrous(rate));
  std::string x = sub.add_conv_bn_relu(name + ".dw", from, in, in, 3, atrous(rate, in));
  return sub.add_conv_bn_relu(name + ".pw", x, in, out, 1, {});
}

LayerSpec resize_like(const std::string& name, const std::string& source,
                      const std::string& reference, std::int64_t channels) {
  LayerSpec r;
  r.name = name;
  r.kind = LayerKind::resize;
  r.inputs = {source, reference};
  r.in_channels = r.out_channels = channels;
  return r;
}

}  // namespace

Subgraph build_aspp(std::int64_t in_channels, const std::vector<std::int64_t>& rates,
                    std::int64_t out_channels, const AsppOptions& options) {
  require_positive(in_channels, "ASPP input channels");
  require_positive(out_channels, "ASPP output channels");
  std::set<std::int64_t> distinct;
  for (auto r : rates) {
    require_positive(r, "every ASPP rate");
    if (!distinct.insert(r).second) throw ValueError("ASPP rates must be distinct");
  }

  Subgraph sub;
  sub.kind = BlockKind::aspp;
  sub.name = options.name;
  sub.input = options.input;
  sub.in_channels = in_channels;
  sub.out_channels = out_channels;

  const std::string& n = options.name;
  std::vector<std::string> branches;
  branches.push_back(
      sub.add_conv_bn_relu(n + ".b0", options.input, in_channels, out_channels, 1, {}));
  for (std::size_t i = 0; i < rates.size(); ++i) {
    branches.push_back(add_conv3x3_unit(sub, n + ".b" + std::to_string(i + 1), options.input,
                                        in_channels, out_channels, rates[i],
                                        options.separable));
  }

  LayerSpec gap;
  gap.name = n + ".pool.gap";
  gap.kind = LayerKind::global_avg_pool;
  gap.inputs = {options.input};
  gap.in_channels = gap.out_channels = in_channels;
  std::string pooled = sub.add(std::move(gap));
  pooled = sub.add_conv(n + ".pool.conv", pooled, in_channels, out_channels, 1, {}, true);
  pooled = sub.add_relu(n + ".pool.relu", pooled);
  branches.push_back(sub.add(resize_like(n + ".pool.resize", pooled, options.input,
                                         out_channels)));

  const auto concat_channels = static_cast<std::int64_t>(branches.size()) * out_channels;
  LayerSpec cat;
  cat.name = n + ".concat";
  cat.kind = LayerKind::concat;
  cat.inputs = branches;
  cat.in_channels = cat.out_channels = concat_channels;
  std::string joined = sub.add(std::move(cat));
  sub.output = sub.add_conv_bn_relu(n + ".project", joined, concat_channels, out_channels,
                                    1, {});
  return sub;
}

SegmenterConfig SegmenterConfig::standard() { return SegmenterConfig{}; }

SegmenterConfig SegmenterConfig::toy() {
  SegmenterConfig c;
  c.stem_channels = 8;
  c.stem_kernel = 3;
  c.stem_stride = 1;
  c.stem_pool = false;
  c.growth_rate = 4;
  c.block_sizes = {2, 2, 2, 2};
  c.bottleneck = 2;
  c.output_stride = 8;
  c.aspp_rates = {1, 2, 3};
  c.aspp_channels = 16;
  c.low_level_stage = 1;
  c.low_level_channels = 8;
  c.decoder_channels = 16;
  c.input_height = 64;
  c.input_width = 64;
  return c;
}

std::vector<std::int64_t> stage_strides(const SegmenterConfig& config) {
  std::vector<std::int64_t> strides;
  std::int64_t os = config.stem_stride * (config.stem_pool ? 2 : 1);
  strides.push_back(os);
  for (std::size_t i = 0; i < config.block_sizes.size(); ++i) {
    if (i > 0 && os < config.output_stride) os *= 2;
    strides.push_back(os);
  }
  return strides;
}

void SegmenterConfig::validate() const {
  if (backbone != "dense") throw ValueError("unknown segmenter backbone '" + backbone + "'");
  require_positive(in_channels, "in_channels");
  require_positive(stem_channels, "stem_channels");
  require_positive(stem_kernel, "stem_kernel");
  if (stem_kernel % 2 == 0) throw ValueError("stem_kernel must be odd");
  require_positive(stem_stride, "stem_stride");
  require_positive(growth_rate, "growth_rate");
  if (block_sizes.empty()) throw ValueError("block_sizes must not be empty");
  for (auto b : block_sizes) require_positive(b, "every block size");
  if (bottleneck < 0) throw ValueError("bottleneck must be >= 0");
  if (!(compression > 0.0 && compression <= 1.0)) {
    throw ValueError("compression must lie in (0, 1]");
  }
  require_positive(output_stride, "output_stride");
  if (stage_strides(*this).back() != output_stride) {
    throw ValueError("output_stride " + std::to_string(output_stride) +
                     " is not reachable with this stem and block count");
  }
  require_positive(aspp_channels, "aspp_channels");
  if (low_level_stage < 0 || low_level_stage > static_cast<std::int64_t>(block_sizes.size())) {
    throw ValueError("low_level_stage out of range");
  }
  require_positive(low_level_channels, "low_level_channels");
  require_positive(decoder_channels, "decoder_channels");
  if (num_classes != 2) throw ValueError("the segmenter has exactly 2 classes");
  require_positive(input_height, "input_height");
  require_positive(input_width, "input_width");
}

ModelGraph build_segmenter(const SegmenterConfig& config) {
  config.validate();
  ModelMetadata meta;
  meta.task = ModelTask::segmentation;
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
  stem.out_channels = config.stem_channels;
  {
    ops::ConvParams p;
    p.stride = {config.stem_stride, config.stem_stride};
    p.padding = {config.stem_kernel / 2, config.stem_kernel / 2};
    std::string x = stem.add_conv_bn_relu("stem", kInputNode, config.in_channels,
                                          config.stem_channels, config.stem_kernel, p);
    if (config.stem_pool) {
      LayerSpec pool;
      pool.name = "stem.pool";
      pool.kind = LayerKind::max_pool;
      pool.inputs = {x};
      pool.in_channels = pool.out_channels = config.stem_channels;
      pool.pool = ops::PoolParams{{3, 3}, {2, 2}, {1, 1}};
      x = stem.add(std::move(pool));
    }
    stem.output = x;
  }
  graph.append(stem, rng);
  graph.add_tap("stem", stem.output);

  std::string low_node = stem.output;
  std::int64_t low_channels = config.stem_channels;

  std::string x = stem.output;
  std::int64_t ch = config.stem_channels;
  std::int64_t os = config.stem_stride * (config.stem_pool ? 2 : 1);
  std::int64_t dilation = 1;
  const std::size_t nblocks = config.block_sizes.size();
  for (std::size_t i = 0; i < nblocks; ++i) {
    const std::string idx = std::to_string(i + 1);
    DenseBlockOptions bo;
    bo.name = "block" + idx;
    bo.input = x;
    bo.bottleneck = config.bottleneck;
    bo.dilation = dilation;
    Subgraph block = build_dense_block(ch, config.block_sizes[i], config.growth_rate, bo);
    graph.append(block, rng);
    graph.add_tap(bo.name, block.output);
    x = block.output;
    ch = block.out_channels;
    if (static_cast<std::int64_t>(i + 1) == config.low_level_stage) {
      low_node = x;
      low_channels = ch;
    }
    if (i + 1 < nblocks) {
      TransitionOptions to;
      to.name = "transition" + idx;
      to.input = x;
      to.pool = os < config.output_stride;
      if (to.pool) {
        os *= 2;
      } else {
        dilation *= 2;
      }
      Subgraph trans = build_transition(ch, config.compression, to);
      graph.append(trans, rng);
      graph.add_tap(to.name, trans.output);
      x = trans.output;
      ch = trans.out_channels;
    }
  }

  AsppOptions ao;
  ao.input = x;
  ao.separable = config.separable;
  Subgraph aspp = build_aspp(ch, config.aspp_rates, config.aspp_channels, ao);
  graph.append(aspp, rng);
  graph.add_tap("aspp", aspp.output);

  Subgraph dec;
  dec.kind = BlockKind::decoder;
  dec.name = "decoder";
  dec.input = aspp.output;
  dec.in_channels = config.aspp_channels;
  dec.out_channels = config.num_classes;
  const std::string low = dec.add_conv_bn_relu("decoder.low", low_node, low_channels,
                                               config.low_level_channels, 1, {});
  const std::string high = dec.add(
      resize_like("decoder.high", aspp.output, low, config.aspp_channels));
  const std::int64_t cat_channels = config.aspp_channels + config.low_level_channels;
  LayerSpec cat;
  cat.name = "decoder.concat";
  cat.kind = LayerKind::concat;
  cat.inputs = {high, low};
  cat.in_channels = cat.out_channels = cat_channels;
  std::string y = dec.add(std::move(cat));
  y = add_conv3x3_unit(dec, "decoder.conv1", y, cat_channels, config.decoder_channels, 1,
                       config.separable);
  y = add_conv3x3_unit(dec, "decoder.conv2", y, config.decoder_channels,
                       config.decoder_channels, 1, config.separable);
  const std::string decoded = y;
  y = dec.add_conv("classifier", y, config.decoder_channels, config.num_classes, 1, {}, true);
  dec.output = dec.add(resize_like("logits", y, kInputNode, config.num_classes));
  graph.append(dec, rng);
  graph.add_tap("decoder.low", low);
  graph.add_tap("decoder.high", high);
  graph.add_tap("decoder.concat", "decoder.concat");
  graph.add_tap("decoder.out", decoded);
  graph.add_tap("logits", dec.output);

  graph.validate();
  graph.infer_shapes({1, config.in_channels, config.input_height, config.input_width});
  return graph;
}

Tensor crack_probability(const ModelGraph& model, const Tensor& image) {
  const auto& meta = model.metadata();
  if (meta.task != ModelTask::segmentation) {
    throw ValueError("segment needs a segmentation model");
  }
  const Shape expected{1, meta.in_channels, meta.input_height, meta.input_width};
  if (image.shape() != expected) {
    throw ShapeError("segment: image shape " + to_string(image.shape()) +
                     " does not match model input " + to_string(expected));
  }
  const Tensor probs = ops::softmax(model.forward(image), 1);
  const std::int64_t hw = meta.input_height * meta.input_width;
  const auto p = probs.data();
  std::vector<double> crack(p.begin() + hw * static_cast<int>(Label::crack),
                            p.begin() + hw * (static_cast<int>(Label::crack) + 1));
  return Tensor::from_data({meta.input_height, meta.input_width}, std::move(crack));
}

Tensor segment(const ModelGraph& model, const Tensor& image, double threshold) {
  const Tensor prob = crack_probability(model, image);
  std::vector<double> mask(prob.data().begin(), prob.data().end());
  for (auto& v : mask) v = v > threshold ? 1.0 : 0.0;
  return Tensor::from_data(prob.shape(), std::move(mask));
}

}  // namespace tunnelcrack::models
