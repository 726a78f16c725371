#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tunnelcrack/data.hpp"
#include "tunnelcrack/metrics.hpp"
#include "tunnelcrack/pipeline/config.hpp"

namespace tunnelcrack::pipeline {

struct RunRecord {
  std::string image;  // as written in the manifest
  models::Label truth = models::Label::background;
  bool ok = true;
  std::string error;

  // Stage 1. Absent when the image could not be classified.
  std::optional<std::array<double, 2>> probs;
  std::optional<models::Label> predicted;

  // Stage 2, only for images predicted crack. Paths are relative to the
  // output directory.
  std::optional<std::string> mask;
  std::optional<metrics::ImageScore> scores;  // when a ground-truth mask exists
  std::vector<std::string> heatmaps;

  bool operator==(const RunRecord&) const = default;
};

struct StageTiming {
  metrics::TimingStats classify;
  metrics::TimingStats segment;
  metrics::TimingStats explain;

  bool operator==(const StageTiming&) const = default;
};

struct RunReport {
  std::vector<RunRecord> records;
  std::int64_t failures = 0;
  metrics::MetricsReport metrics;
  StageTiming timing;

  bool operator==(const RunReport&) const = default;
};

nlohmann::json to_json(const RunReport& report, bool include_timing = true);
RunReport run_report_from_json(const nlohmann::json& j);
// One row per record.
std::string run_report_csv(const RunReport& report);
// Writes run_report.json and run_report.csv into `dir`.
void write_run_report(const RunReport& report, const std::filesystem::path& dir);
RunReport read_run_report(const std::filesystem::path& json_path);
bool same_apart_from_timing(const RunReport& a, const RunReport& b);

// Stage 1 on every record; stage 2 (mask, scores, optional heatmaps) on the
// records stage 1 labels crack. A record that fails is marked and skipped.
RunReport run_pipeline(const PipelineConfig& config, const data::SampleManifest& manifest);

// Test split: stage 1 on every record, stage 2 on the ground-truth crack
// records. Writes metrics.json plus flat tables into the output directory.
metrics::MetricsReport eval_command(const PipelineConfig& config,
                                    const data::SampleManifest& manifest);

// One heatmap and one overlay per configured tap. Returns the written files.
std::vector<std::filesystem::path> explain_command(const PipelineConfig& config,
                                                   const std::filesystem::path& image);

// "decoder.out" -> "decoder-out"
std::string file_safe(const std::string& name);
std::string heatmap_file_name(const std::string& stem, const std::string& tap, std::int64_t c,
                              bool overlay);

// Manifest copy whose relative paths are rewritten to resolve from `dir`.
data::SampleManifest rebase_manifest(const data::SampleManifest& manifest,
                                     const std::filesystem::path& dir);

}  // namespace tunnelcrack::pipeline
