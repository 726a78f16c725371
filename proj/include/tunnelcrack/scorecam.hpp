#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tunnelcrack/models/model_graph.hpp"
#include "tunnelcrack/tensor.hpp"

namespace tunnelcrack::scorecam {

// Reduction that turns a segmentation output into one class score.
enum class Reduction {
  mean,         // spatial mean of the class softmax map
  region_mean,  // mean over ScoreOptions::region pixels only
};

struct ScoreOptions {
  Reduction reduction = Reduction::mean;
  Tensor region;  // H x W of {0,1}, for region_mean
};

// Softmax probability of class c for each batch item: the class probability
// for a classifier, the reduced class map for a segmenter.
std::vector<double> class_scores(const models::ModelGraph& model, const Tensor& batch,
                                 std::int64_t c, const ScoreOptions& options = {});
double class_score(const models::ModelGraph& model, const Tensor& image, std::int64_t c,
                   const ScoreOptions& options = {});

// Bilinear resize of one activation plane, then min-max scaling to [0,1].
// A constant plane maps to zeros.
Tensor normalize_mask(const Tensor& channel, std::int64_t target_h, std::int64_t target_w);
Tensor min_max(const Tensor& plane);

// image (1 x C x H x W) times mask (H x W) on every channel.
Tensor apply_mask(const Tensor& image, const Tensor& mask);

// f_c(image * mask) - f_c(baseline); the baseline is the all-zero input.
double cic_weight(const models::ModelGraph& model, const Tensor& image, const Tensor& mask,
                  std::int64_t c, const ScoreOptions& options = {});

enum class Normalization { raw, unit_max };

struct Heatmap {
  Tensor values;  // H x W, nonnegative
  std::string layer;
  std::int64_t class_index = 1;
  Normalization state = Normalization::raw;
};

// ReLU(sum_k weights[k] * activations[k]); activations are K x h x w or 1 x K x h x w.
Tensor weighted_activation_sum(const Tensor& activations, const std::vector<double>& weights);

struct ScoreCamOptions {
  ScoreOptions score;
  // Masked inputs evaluated per forward call.
  std::int64_t mask_batch = 8;
};

struct ScoreCamResult {
  Heatmap heatmap;  // native tap resolution, raw
  std::vector<double> weights;
  std::int64_t forward_passes = 0;  // images evaluated: K masked + 1 tapped + 1 baseline
};

ScoreCamResult scorecam(const models::ModelGraph& model, const Tensor& image,
                        const std::string& tap, std::int64_t c,
                        const ScoreCamOptions& options = {});

std::vector<ScoreCamResult> explain_stages(const models::ModelGraph& model, const Tensor& image,
                                           const std::vector<std::string>& taps, std::int64_t c,
                                           const ScoreCamOptions& options = {});

Heatmap upsample(const Heatmap& heatmap, std::int64_t h, std::int64_t w);
// Divides by the maximum; an all-zero map stays zero.
Heatmap unit_max(const Heatmap& heatmap);

// Jet-style table, linear between control points:
//   0 -> (0,0,0.5)  0.125 -> (0,0,1)  0.375 -> (0,1,1)
//   0.625 -> (1,1,0)  0.875 -> (1,0,0)  1 -> (0.5,0,0)
std::array<double, 3> colormap(double v);

// alpha * colormap(heatmap) + (1 - alpha) * image. `image` is unit RGB
// 1 x 3 x H x W; the unit-max heatmap is resized to match.
Tensor overlay(const Heatmap& heatmap, const Tensor& image, double alpha);

}  // namespace tunnelcrack::scorecam
