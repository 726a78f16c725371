#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tunnelcrack/models/model_graph.hpp"
#include "tunnelcrack/tensor.hpp"

namespace tunnelcrack::data {

using models::Label;
using tunnelcrack::to_string;

class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Images and masks

struct ImageNorm {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

// RGB in [0,1], 1 x 3 x H x W, bilinear-resized when the size differs.
Tensor load_image_unit(const std::filesystem::path& path, std::int64_t target_h,
                       std::int64_t target_w);
// load_image_unit followed by per-channel standardization.
Tensor load_image(const std::filesystem::path& path, std::int64_t target_h,
                  std::int64_t target_w, const ImageNorm& norm = {});
Tensor standardize(const Tensor& unit_rgb, const ImageNorm& norm = {});

// H x W of {0,1}: nearest-neighbour resize, then >= 128 becomes 1.
Tensor load_mask(const std::filesystem::path& path, std::int64_t target_h,
                 std::int64_t target_w);
Tensor binarize_mask(const Tensor& gray_0_255);
Tensor nearest_resize(const Tensor& plane, std::int64_t out_h, std::int64_t out_w);

// Writers infer the format from the extension. Values are clamped to range.
void save_mask(const Tensor& mask, const std::filesystem::path& path);  // {0,1} -> 0/255
void save_grayscale(const Tensor& unit, const std::filesystem::path& path);
void save_rgb(const Tensor& unit_rgb, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest

enum class Split { unassigned, train, val, test };

const char* to_string(Split split);
Split split_from_string(const std::string& text);

struct SampleRecord {
  std::string image_path;
  Label label = Label::background;
  std::string mask_path;  // empty when absent
  Split split = Split::unassigned;

  bool operator==(const SampleRecord&) const = default;
};

// Text form:
//
//   # seed=42
//   image_path,label,mask_path,split
//   images/crack_000.png,crack,masks/crack_000.png,train
//
// Leading `# key=value` lines are metadata. Relative paths resolve against
// the directory holding the manifest file.
struct SampleManifest {
  std::vector<SampleRecord> records;
  std::vector<std::pair<std::string, std::string>> metadata;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& path) const;
  std::vector<SampleRecord> select(Split split) const;
  std::optional<std::string> meta(const std::string& key) const;
  void set_meta(const std::string& key, const std::string& value);
  // Throws when a crack record has no mask path.
  void require_masks_for_cracks() const;

  bool operator==(const SampleManifest& o) const {
    return records == o.records && metadata == o.metadata;
  }
};

std::string manifest_to_text(const SampleManifest& manifest);
SampleManifest manifest_from_text(const std::string& text,
                                  const std::filesystem::path& base_dir = {});
void save_manifest(const SampleManifest& manifest, const std::filesystem::path& path);
SampleManifest load_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Stratified split

struct SplitOptions {
  std::array<double, 3> ratios{0.7, 0.2, 0.1};
  std::uint64_t seed = 42;
  // Classes that must be present; an empty one is an error.
  std::set<Label> required_classes{Label::background, Label::crack};
};

struct SplitCounts {
  std::int64_t train = 0;
  std::int64_t val = 0;
  std::int64_t test = 0;
  bool operator==(const SplitCounts&) const = default;
};

// floor(n * ratio) for train and val, remainder to test.
SplitCounts split_counts(std::int64_t n, const std::array<double, 3>& ratios);

// Per class: seeded shuffle, then the first split_counts().train records go to
// train, the next .val to val, the rest to test. Records keep their order.
SampleManifest stratified_split(const SampleManifest& manifest, const SplitOptions& options = {});

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthOptions {
  std::int64_t crack_images = 5;
  std::int64_t background_images = 5;
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::uint64_t seed = 42;
  double min_crack_width = 2.5;
  double max_crack_width = 4.0;
  std::int64_t min_segments = 2;
  std::int64_t max_segments = 4;
};

// Textured backgrounds; crack images add dark polylines whose exact
// distance-to-curve footprint is the mask. Writes images/, masks/ and
// manifest.csv under `dir`. Background records carry an empty mask.
SampleManifest synth_dataset(const std::filesystem::path& dir, const SynthOptions& options);

}  // namespace tunnelcrack::data
