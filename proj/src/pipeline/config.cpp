#include "tunnelcrack/pipeline/config.hpp"

#include <cmath>
#include <functional>
#include <set>

#include "tunnelcrack/weights.hpp"

namespace tunnelcrack::pipeline {

namespace {

using Path = std::filesystem::path;

struct Field {
  ConfigKey key;
  std::function<void(PipelineConfig&, const KeyValueConfig&)> read;
  std::function<std::string(const PipelineConfig&)> write;
};

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

Field text(const char* name, const char* help, std::string PipelineConfig::*m) {
  return {{name, help},
          [=](PipelineConfig& c, const KeyValueConfig& kv) { c.*m = kv.get(name); },
          [=](const PipelineConfig& c) { return c.*m; }};
}

Field path(const char* name, const char* help, Path PipelineConfig::*m) {
  return {{name, help},
          [=](PipelineConfig& c, const KeyValueConfig& kv) { c.*m = Path(kv.get(name)); },
          [=](const PipelineConfig& c) { return (c.*m).string(); }};
}

Field integer(const char* name, const char* help, std::int64_t PipelineConfig::*m) {
  return {{name, help},
          [=](PipelineConfig& c, const KeyValueConfig& kv) { c.*m = kv.get_int(name); },
          [=](const PipelineConfig& c) { return std::to_string(c.*m); }};
}

Field real(const char* name, const char* help, double PipelineConfig::*m) {
  return {{name, help},
          [=](PipelineConfig& c, const KeyValueConfig& kv) { c.*m = kv.get_double(name); },
          [=](const PipelineConfig& c) { return format_double(c.*m); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(text("classifier_config",
                     "classifier preset (densenet169, toy) or model config file",
                     &PipelineConfig::classifier_config));
    f.push_back(path("classifier_weights", "classifier weight bundle",
                     &PipelineConfig::classifier_weights));
    f.push_back(text("segmenter_config", "segmenter preset (standard, toy) or model config file",
                     &PipelineConfig::segmenter_config));
    f.push_back(path("segmenter_weights", "segmenter weight bundle",
                     &PipelineConfig::segmenter_weights));
    f.push_back(integer("cls_height", "classifier input height", &PipelineConfig::cls_height));
    f.push_back(integer("cls_width", "classifier input width", &PipelineConfig::cls_width));
    f.push_back(integer("seg_height", "segmenter input height", &PipelineConfig::seg_height));
    f.push_back(integer("seg_width", "segmenter input width", &PipelineConfig::seg_width));
    f.push_back(path("manifest", "sample manifest", &PipelineConfig::manifest));
    f.push_back(path("output_dir", "directory for every written artifact",
                     &PipelineConfig::output_dir));
    f.push_back(path("image", "input image for explain", &PipelineConfig::image));
    f.push_back(real("seg_threshold", "crack probability above which a pixel is crack",
                     &PipelineConfig::seg_threshold));
    f.push_back(real("detection_threshold", "IoU a crack must exceed to count as detected",
                     &PipelineConfig::detection_threshold));
    f.push_back({{"explain_taps", "comma-separated Score-CAM taps; empty disables heatmaps"},
                 [](PipelineConfig& c, const KeyValueConfig& kv) {
                   c.explain_taps = kv.get_string_list("explain_taps");
                 },
                 [](const PipelineConfig& c) { return join(c.explain_taps); }});
    f.push_back(text("explain_model", "model explained by explain: segmenter or classifier",
                     &PipelineConfig::explain_model));
    f.push_back(integer("explain_class", "target class for heatmaps",
                        &PipelineConfig::explain_class));
    f.push_back(real("overlay_alpha", "heatmap weight in overlays", &PipelineConfig::overlay_alpha));
    f.push_back(integer("mask_batch", "masked inputs per Score-CAM forward call",
                        &PipelineConfig::mask_batch));
    f.push_back(integer("cls_epochs", "classifier training epochs", &PipelineConfig::cls_epochs));
    f.push_back(integer("cls_batch_size", "classifier batch size", &PipelineConfig::cls_batch_size));
    f.push_back(real("cls_lr", "classifier initial learning rate", &PipelineConfig::cls_lr));
    f.push_back(real("cls_lr_factor", "classifier decay factor", &PipelineConfig::cls_lr_factor));
    f.push_back(integer("cls_lr_step", "epochs between classifier decays",
                        &PipelineConfig::cls_lr_step));
    f.push_back(integer("seg_epochs", "segmenter training epochs", &PipelineConfig::seg_epochs));
    f.push_back(integer("seg_batch_size", "segmenter batch size", &PipelineConfig::seg_batch_size));
    f.push_back(real("seg_lr", "segmenter first-phase learning rate", &PipelineConfig::seg_lr));
    f.push_back(real("seg_lr_factor", "segmenter second-phase factor",
                     &PipelineConfig::seg_lr_factor));
    f.push_back(integer("seg_lr_switch", "first epoch of the segmenter second phase",
                        &PipelineConfig::seg_lr_switch));
    f.push_back(real("momentum", "SGD momentum", &PipelineConfig::momentum));
    f.push_back(real("weight_decay", "SGD weight decay", &PipelineConfig::weight_decay));
    f.push_back({{"seed", "seed for shuffling, splitting and synthesis"},
                 [](PipelineConfig& c, const KeyValueConfig& kv) {
                   const auto v = kv.get_int("seed");
                   if (v < 0) throw ConfigError("seed must be nonnegative");
                   c.seed = static_cast<std::uint64_t>(v);
                 },
                 [](const PipelineConfig& c) { return std::to_string(c.seed); }});
    f.push_back({{"split_ratios", "train,val,test ratios"},
                 [](PipelineConfig& c, const KeyValueConfig& kv) {
                   const auto r = kv.get_double_list("split_ratios");
                   if (r.size() != 3) throw ConfigError("split_ratios needs three values");
                   c.split_ratios = {r[0], r[1], r[2]};
                 },
                 [](const PipelineConfig& c) {
                   return format_double(c.split_ratios[0]) + "," + format_double(c.split_ratios[1]) +
                          "," + format_double(c.split_ratios[2]);
                 }});
    f.push_back(path("split_output", "manifest written by split (default: <manifest>_split.csv)",
                     &PipelineConfig::split_output));
    f.push_back(integer("synth_crack", "synthetic crack images", &PipelineConfig::synth_crack));
    f.push_back(integer("synth_background", "synthetic background images",
                        &PipelineConfig::synth_background));
    f.push_back(integer("synth_height", "synthetic image height", &PipelineConfig::synth_height));
    f.push_back(integer("synth_width", "synthetic image width", &PipelineConfig::synth_width));
    return f;
  }();
  return table;
}

void require_positive(const char* what, std::int64_t v) {
  if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
}

void require_unit(const char* what, double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
}

template <class Config>
Config resolve(const std::string& choice, const std::string& kind, const char* preset_a,
               Config (*a)(), const char* preset_b, Config (*b)()) {
  if (choice == preset_a) return a();
  if (choice == preset_b) return b();
  if (!std::filesystem::exists(choice)) {
    throw ConfigError(kind + " config '" + choice + "' is neither a preset nor an existing file");
  }
  auto loaded = models::load_model_config(choice);
  if (const auto* c = std::get_if<Config>(&loaded)) return *c;
  throw ConfigError(kind + " config '" + choice + "' describes the wrong model kind");
}

void load_checked(models::ModelGraph& model, const Path& weights, const std::string& kind) {
  if (weights.empty()) throw ConfigError(kind + "_weights is not set");
  if (!std::filesystem::exists(weights)) {
    throw ConfigError("missing " + kind + " weights: " + weights.string());
  }
  data::load_weights(model, weights);
}

}  // namespace

void PipelineConfig::validate() const {
  require_positive("cls_height", cls_height);
  require_positive("cls_width", cls_width);
  require_positive("seg_height", seg_height);
  require_positive("seg_width", seg_width);
  require_unit("seg_threshold", seg_threshold);
  require_unit("detection_threshold", detection_threshold);
  require_unit("overlay_alpha", overlay_alpha);
  require_positive("mask_batch", mask_batch);
  if (explain_model != "segmenter" && explain_model != "classifier") {
    throw ConfigError("explain_model must be 'segmenter' or 'classifier'");
  }
  if (explain_class < 0 || explain_class > 1) throw ConfigError("explain_class must be 0 or 1");
  require_positive("cls_epochs", cls_epochs);
  require_positive("cls_batch_size", cls_batch_size);
  require_positive("cls_lr_step", cls_lr_step);
  require_positive("seg_epochs", seg_epochs);
  require_positive("seg_batch_size", seg_batch_size);
  if (seg_lr_switch < 0) throw ConfigError("seg_lr_switch must be nonnegative");
  for (double lr : {cls_lr, seg_lr}) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rates must be positive");
  }
  require_unit("momentum", momentum);
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  double total = 0.0;
  for (double r : split_ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (synth_crack < 0 || synth_background < 0) throw ConfigError("synthetic counts must be >= 0");
  require_positive("synth_height", synth_height);
  require_positive("synth_width", synth_width);
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return keys;
}

PipelineConfig pipeline_config_from(const KeyValueConfig& kv) {
  std::set<std::string> known;
  for (const auto& f : fields()) known.insert(f.key.name);
  PipelineConfig c;
  try {
    kv.require_known(known);
    for (const auto& f : fields()) {
      if (kv.has(f.key.name)) f.read(c, kv);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

KeyValueConfig to_key_values(const PipelineConfig& config) {
  KeyValueConfig kv;
  for (const auto& f : fields()) kv.set(f.key.name, f.write(config));
  return kv;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  try {
    return pipeline_config_from(KeyValueConfig::load(path));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

models::DenseNetConfig classifier_model_config(const PipelineConfig& config) {
  auto c = resolve<models::DenseNetConfig>(config.classifier_config, "classifier", "densenet169",
                                           &models::DenseNetConfig::densenet169, "toy",
                                           &models::DenseNetConfig::toy);
  c.input_height = config.cls_height;
  c.input_width = config.cls_width;
  return c;
}

models::SegmenterConfig segmenter_model_config(const PipelineConfig& config) {
  auto c = resolve<models::SegmenterConfig>(config.segmenter_config, "segmenter", "standard",
                                            &models::SegmenterConfig::standard, "toy",
                                            &models::SegmenterConfig::toy);
  c.input_height = config.seg_height;
  c.input_width = config.seg_width;
  return c;
}

models::ModelGraph load_classifier(const PipelineConfig& config) {
  auto model = models::build_classifier(classifier_model_config(config));
  load_checked(model, config.classifier_weights, "classifier");
  return model;
}

models::ModelGraph load_segmenter(const PipelineConfig& config) {
  auto model = models::build_segmenter(segmenter_model_config(config));
  load_checked(model, config.segmenter_weights, "segmenter");
  return model;
}

}  // namespace tunnelcrack::pipeline
