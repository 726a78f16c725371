// Command-line front end: tunnelcrack <subcommand> [--config FILE] [--key VALUE ...]

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "tunnelcrack/data.hpp"
#include "tunnelcrack/pipeline/config.hpp"
#include "tunnelcrack/pipeline/run.hpp"
#include "tunnelcrack/pipeline/training.hpp"

namespace fs = std::filesystem;
using namespace tunnelcrack;
using namespace tunnelcrack::pipeline;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2 };

PipelineConfig gather(const std::string& config_path,
                      const std::map<std::string, std::string>& flags) {
  KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
  for (const auto& [k, v] : flags) kv.set(k, v);
  return pipeline_config_from(kv);
}

data::SampleManifest require_manifest(const PipelineConfig& c) {
  if (c.manifest.empty()) throw ConfigError("manifest is not set");
  if (!fs::exists(c.manifest)) throw ConfigError("manifest not found: " + c.manifest.string());
  return data::load_manifest(c.manifest);
}

int cmd_split(const PipelineConfig& c) {
  const auto manifest = require_manifest(c);
  data::SplitOptions opts;
  opts.ratios = c.split_ratios;
  opts.seed = c.seed;
  auto out_path = c.split_output;
  if (out_path.empty()) {
    out_path = c.manifest.parent_path() / (c.manifest.stem().string() + "_split.csv");
  }
  const auto split = rebase_manifest(data::stratified_split(manifest, opts), out_path.parent_path());
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  data::save_manifest(split, out_path);
  const auto show = [&](data::Split s) { return split.select(s).size(); };
  std::cout << "wrote " << out_path.string() << ": train " << show(data::Split::train) << ", val "
            << show(data::Split::val) << ", test " << show(data::Split::test) << '\n';
  return kOk;
}

int cmd_synth(const PipelineConfig& c) {
  data::SynthOptions opts;
  opts.crack_images = c.synth_crack;
  opts.background_images = c.synth_background;
  opts.height = c.synth_height;
  opts.width = c.synth_width;
  opts.seed = c.seed;
  const auto manifest = data::synth_dataset(c.output_dir, opts);
  std::cout << "wrote " << manifest.records.size() << " records to "
            << (c.output_dir / "manifest.csv").string() << '\n';
  return kOk;
}

void print_training(const TrainResult& r) {
  for (const auto& s : r.history) {
    std::printf("epoch %3lld  lr %.3g  train %.6f  val %.6f\n", static_cast<long long>(s.epoch),
                s.lr, s.train_loss, s.val_loss);
  }
  std::printf("best epoch %lld, val loss %.6f\n", static_cast<long long>(r.best_epoch),
              r.best_val_loss);
}

int cmd_run(const PipelineConfig& c) {
  const auto report = run_pipeline(c, require_manifest(c));
  std::int64_t routed = 0;
  for (const auto& r : report.records) routed += r.mask.has_value();
  std::cout << "classified " << report.timing.classify.count << ", segmented " << routed
            << ", failed " << report.failures << "; report in " << c.output_dir.string() << '\n';
  return report.failures == 0 ? kOk : kRuntime;
}

int cmd_eval(const PipelineConfig& c) {
  const auto report = eval_command(c, require_manifest(c));
  std::cout << metrics::to_json(report).dump(2) << '\n';
  return kOk;
}

int cmd_explain(const PipelineConfig& c) {
  for (const auto& f : explain_command(c, c.image)) std::cout << f.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage tunnel-lining crack inspection: classify, segment, explain."};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "key = value configuration file")
      ->check(CLI::ExistingFile);
  std::map<std::string, std::string> flags;
  for (const auto& key : config_keys()) {
    app.add_option_function<std::string>(
        "--" + key.name, [&flags, name = key.name](const std::string& v) { flags[name] = v; },
        key.help);
  }

  const std::map<std::string, std::pair<std::string, int (*)(const PipelineConfig&)>> commands{
      {"split", {"stratified 7:2:1 split of a manifest", cmd_split}},
      {"synth", {"generate a synthetic crack corpus", cmd_synth}},
      {"train-cls",
       {"train the classifier",
        [](const PipelineConfig& c) {
          print_training(train_classifier_command(c));
          return static_cast<int>(kOk);
        }}},
      {"train-seg",
       {"train the segmenter",
        [](const PipelineConfig& c) {
          print_training(train_segmenter_command(c));
          return static_cast<int>(kOk);
        }}},
      {"run", {"classify every image, then segment and explain the crack ones", cmd_run}},
      {"eval", {"score both stages on the test split", cmd_eval}},
      {"explain", {"Score-CAM heatmaps for one image", cmd_explain}},
  };
  for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.first);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const auto config = gather(config_path, flags);
    for (const auto* sub : app.get_subcommands()) {
      return commands.at(sub->get_name()).second(config);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
