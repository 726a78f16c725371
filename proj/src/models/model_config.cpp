#include "tunnelcrack/models/model_config.hpp"

namespace tunnelcrack::models {

namespace {

const std::set<std::string> kClassifierKeys{
    "model",       "preset",           "growth_rate", "block_sizes",
    "initial_channels", "compression", "bottleneck",  "num_classes",
    "in_channels", "input_height",     "input_width", "seed"};

const std::set<std::string> kSegmenterKeys{
    "model",           "preset",           "backbone",      "in_channels",
    "stem_channels",   "stem_kernel",      "stem_stride",   "stem_pool",
    "growth_rate",     "block_sizes",      "bottleneck",    "compression",
    "output_stride",   "aspp_rates",       "aspp_channels", "low_level_stage",
    "low_level_channels", "decoder_channels", "separable",  "num_classes",
    "input_height",    "input_width",      "seed"};

template <typename T>
void read_int(const KeyValueConfig& kv, const char* key, T& field) {
  if (kv.has(key)) field = static_cast<T>(kv.get_int(key));
}

DenseNetConfig classifier_from(const KeyValueConfig& kv) {
  kv.require_known(kClassifierKeys);
  const auto preset = kv.get_or("preset", "densenet169");
  DenseNetConfig c;
  if (preset == "toy") {
    c = DenseNetConfig::toy();
  } else if (preset != "densenet169") {
    throw ValueError("unknown classifier preset '" + preset + "'");
  }
  read_int(kv, "growth_rate", c.growth_rate);
  if (kv.has("block_sizes")) c.block_sizes = kv.get_int_list("block_sizes");
  read_int(kv, "initial_channels", c.initial_channels);
  c.compression = kv.get_double_or("compression", c.compression);
  read_int(kv, "bottleneck", c.bottleneck);
  read_int(kv, "num_classes", c.num_classes);
  read_int(kv, "in_channels", c.in_channels);
  read_int(kv, "input_height", c.input_height);
  read_int(kv, "input_width", c.input_width);
  read_int(kv, "seed", c.seed);
  c.validate();
  return c;
}

SegmenterConfig segmenter_from(const KeyValueConfig& kv) {
  kv.require_known(kSegmenterKeys);
  const auto preset = kv.get_or("preset", "standard");
  SegmenterConfig c;
  if (preset == "toy") {
    c = SegmenterConfig::toy();
  } else if (preset != "standard") {
    throw ValueError("unknown segmenter preset '" + preset + "'");
  }
  c.backbone = kv.get_or("backbone", c.backbone);
  read_int(kv, "in_channels", c.in_channels);
  read_int(kv, "stem_channels", c.stem_channels);
  read_int(kv, "stem_kernel", c.stem_kernel);
  read_int(kv, "stem_stride", c.stem_stride);
  c.stem_pool = kv.get_bool_or("stem_pool", c.stem_pool);
  read_int(kv, "growth_rate", c.growth_rate);
  if (kv.has("block_sizes")) c.block_sizes = kv.get_int_list("block_sizes");
  read_int(kv, "bottleneck", c.bottleneck);
  c.compression = kv.get_double_or("compression", c.compression);
  read_int(kv, "output_stride", c.output_stride);
  if (kv.has("aspp_rates")) c.aspp_rates = kv.get_int_list("aspp_rates");
  read_int(kv, "aspp_channels", c.aspp_channels);
  read_int(kv, "low_level_stage", c.low_level_stage);
  read_int(kv, "low_level_channels", c.low_level_channels);
  read_int(kv, "decoder_channels", c.decoder_channels);
  c.separable = kv.get_bool_or("separable", c.separable);
  read_int(kv, "num_classes", c.num_classes);
  read_int(kv, "input_height", c.input_height);
  read_int(kv, "input_width", c.input_width);
  read_int(kv, "seed", c.seed);
  c.validate();
  return c;
}

const char* bool_text(bool v) { return v ? "true" : "false"; }

}  // namespace

KeyValueConfig to_key_values(const DenseNetConfig& c) {
  KeyValueConfig kv;
  kv.set("model", "classifier");
  kv.set("growth_rate", std::to_string(c.growth_rate));
  kv.set("block_sizes", join_ints(c.block_sizes));
  kv.set("initial_channels", std::to_string(c.initial_channels));
  kv.set("compression", format_double(c.compression));
  kv.set("bottleneck", std::to_string(c.bottleneck));
  kv.set("num_classes", std::to_string(c.num_classes));
  kv.set("in_channels", std::to_string(c.in_channels));
  kv.set("input_height", std::to_string(c.input_height));
  kv.set("input_width", std::to_string(c.input_width));
  kv.set("seed", std::to_string(c.seed));
  return kv;
}

KeyValueConfig to_key_values(const SegmenterConfig& c) {
  KeyValueConfig kv;
  kv.set("model", "segmenter");
  kv.set("backbone", c.backbone);
  kv.set("in_channels", std::to_string(c.in_channels));
  kv.set("stem_channels", std::to_string(c.stem_channels));
  kv.set("stem_kernel", std::to_string(c.stem_kernel));
  kv.set("stem_stride", std::to_string(c.stem_stride));
  kv.set("stem_pool", bool_text(c.stem_pool));
  kv.set("growth_rate", std::to_string(c.growth_rate));
  kv.set("block_sizes", join_ints(c.block_sizes));
  kv.set("bottleneck", std::to_string(c.bottleneck));
  kv.set("compression", format_double(c.compression));
  kv.set("output_stride", std::to_string(c.output_stride));
  kv.set("aspp_rates", join_ints(c.aspp_rates));
  kv.set("aspp_channels", std::to_string(c.aspp_channels));
  kv.set("low_level_stage", std::to_string(c.low_level_stage));
  kv.set("low_level_channels", std::to_string(c.low_level_channels));
  kv.set("decoder_channels", std::to_string(c.decoder_channels));
  kv.set("separable", bool_text(c.separable));
  kv.set("num_classes", std::to_string(c.num_classes));
  kv.set("input_height", std::to_string(c.input_height));
  kv.set("input_width", std::to_string(c.input_width));
  kv.set("seed", std::to_string(c.seed));
  return kv;
}

KeyValueConfig to_key_values(const ModelConfig& config) {
  return std::visit([](const auto& c) { return to_key_values(c); }, config);
}

ModelConfig model_config_from(const KeyValueConfig& kv) {
  const auto model = kv.get("model");
  if (model == "classifier") return classifier_from(kv);
  if (model == "segmenter") return segmenter_from(kv);
  throw ValueError("model must be 'classifier' or 'segmenter', got '" + model + "'");
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  return model_config_from(KeyValueConfig::load(path));
}

void save_model_config(const ModelConfig& config, const std::filesystem::path& path) {
  to_key_values(config).save(path);
}

ModelGraph build_model(const ModelConfig& config) {
  if (const auto* c = std::get_if<DenseNetConfig>(&config)) return build_classifier(*c);
  return build_segmenter(std::get<SegmenterConfig>(config));
}

}  // namespace tunnelcrack::models
