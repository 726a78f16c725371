#include "tunnelcrack/scorecam.hpp"

#include <algorithm>
#include <cmath>

#include "tunnelcrack/ops.hpp"

namespace tunnelcrack::scorecam {

using models::ModelGraph;
using models::ModelTask;

namespace {

std::pair<std::int64_t, std::int64_t> plane_dims(const Tensor& t, const char* what) {
  const auto& s = t.shape();
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 3 && s[0] == 1) return {s[1], s[2]};
  if (s.size() == 4 && s[0] == 1 && s[1] == 1) return {s[2], s[3]};
  throw ShapeError(std::string(what) + " expects a single plane, got " + to_string(s));
}

Tensor resize_plane(const Tensor& plane, std::int64_t h, std::int64_t w) {
  const auto [ph, pw] = plane_dims(plane, "resize");
  if (ph == h && pw == w) return Tensor::from_data({h, w}, {plane.data().begin(), plane.data().end()});
  NoGradGuard guard;
  const Tensor r = ops::bilinear_resize(ops::reshape(plane, {1, 1, ph, pw}), h, w);
  return Tensor::from_data({h, w}, {r.data().begin(), r.data().end()});
}

void check_class(const ModelGraph& model, std::int64_t c) {
  if (c < 0 || c >= model.metadata().num_classes) {
    throw ValueError("class index " + std::to_string(c) + " out of range");
  }
}

}  // namespace

std::vector<double> class_scores(const ModelGraph& model, const Tensor& batch, std::int64_t c,
                                 const ScoreOptions& options) {
  check_class(model, c);
  const Tensor probs = ops::softmax(model.forward(batch), 1);
  const std::int64_t B = probs.dim(0);
  const std::int64_t K = probs.dim(1);
  std::vector<double> out(static_cast<std::size_t>(B));
  const auto p = probs.data();
  if (model.metadata().task == ModelTask::classification) {
    for (std::int64_t b = 0; b < B; ++b) out[b] = p[static_cast<std::size_t>(b * K + c)];
    return out;
  }
  const std::int64_t hw = probs.dim(2) * probs.dim(3);
  const bool region = options.reduction == Reduction::region_mean;
  if (region) {
    if (!options.region.defined() || options.region.numel() != hw) {
      throw ShapeError("region reduction needs an H x W region mask matching the output");
    }
  }
  for (std::int64_t b = 0; b < B; ++b) {
    const double* plane = p.data() + (b * K + c) * hw;
    double sum = 0.0;
    double weight = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) {
      const double m = region ? options.region.data()[static_cast<std::size_t>(i)] : 1.0;
      sum += m * plane[i];
      weight += m;
    }
    out[b] = weight > 0.0 ? sum / weight : 0.0;
  }
  return out;
}

double class_score(const ModelGraph& model, const Tensor& image, std::int64_t c,
                   const ScoreOptions& options) {
  return class_scores(model, image, c, options).front();
}

Tensor min_max(const Tensor& plane) {
  const auto v = plane.data();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 0.0);
  if (*hi > *lo) {
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
  }
  return Tensor::from_data(plane.shape(), std::move(out));
}

Tensor normalize_mask(const Tensor& channel, std::int64_t target_h, std::int64_t target_w) {
  return min_max(resize_plane(channel, target_h, target_w));
}

Tensor apply_mask(const Tensor& image, const Tensor& mask) {
  if (image.rank() != 4 || image.dim(0) != 1) throw ShapeError("apply_mask expects 1 x C x H x W");
  const std::int64_t h = image.dim(2);
  const std::int64_t w = image.dim(3);
  if (mask.numel() != h * w || plane_dims(mask, "apply_mask") != std::pair{h, w}) {
    throw ShapeError("mask size " + to_string(mask.shape()) + " does not match image " +
                     to_string(image.shape()));
  }
  std::vector<double> out(image.data().begin(), image.data().end());
  const auto m = mask.data();
  for (std::int64_t c = 0; c < image.dim(1); ++c) {
    for (std::int64_t i = 0; i < h * w; ++i) out[static_cast<std::size_t>(c * h * w + i)] *= m[i];
  }
  return Tensor::from_data(image.shape(), std::move(out));
}

double cic_weight(const ModelGraph& model, const Tensor& image, const Tensor& mask,
                  std::int64_t c, const ScoreOptions& options) {
  const Tensor masked = apply_mask(image, mask);
  const Tensor baseline = Tensor::zeros(image.shape());
  return class_score(model, masked, c, options) - class_score(model, baseline, c, options);
}

Tensor weighted_activation_sum(const Tensor& activations, const std::vector<double>& weights) {
  const auto& s = activations.shape();
  Shape chw;
  if (s.size() == 4 && s[0] == 1) chw = {s[1], s[2], s[3]};
  else if (s.size() == 3) chw = s;
  else throw ShapeError("activations must be K x h x w or 1 x K x h x w");
  const std::int64_t K = chw[0];
  const std::int64_t hw = chw[1] * chw[2];
  if (static_cast<std::int64_t>(weights.size()) != K) {
    throw ValueError("expected one weight per channel");
  }
  std::vector<double> out(static_cast<std::size_t>(hw), 0.0);
  const auto a = activations.data();
  for (std::int64_t k = 0; k < K; ++k) {
    const double wk = weights[static_cast<std::size_t>(k)];
    for (std::int64_t i = 0; i < hw; ++i) out[i] += wk * a[static_cast<std::size_t>(k * hw + i)];
  }
  for (auto& v : out) v = std::max(v, 0.0);
  return Tensor::from_data({chw[1], chw[2]}, std::move(out));
}

ScoreCamResult scorecam(const ModelGraph& model, const Tensor& image, const std::string& tap,
                        std::int64_t c, const ScoreCamOptions& options) {
  check_class(model, c);
  if (options.mask_batch < 1) throw ValueError("mask_batch must be positive");
  if (image.rank() != 4 || image.dim(0) != 1) throw ShapeError("scorecam expects one image");

  ScoreCamResult result;
  const auto tapped = model.forward_with_taps(image, {tap});
  result.forward_passes += 1;
  const Tensor& act = tapped.taps.at(tap);
  if (act.rank() != 4) {
    throw ShapeError("tap '" + tap + "' is not a spatial feature map: " + to_string(act.shape()));
  }
  const std::int64_t K = act.dim(1);
  const std::int64_t ah = act.dim(2);
  const std::int64_t aw = act.dim(3);
  const std::int64_t H = image.dim(2);
  const std::int64_t W = image.dim(3);

  const double baseline =
      class_score(model, Tensor::zeros(image.shape()), c, options.score);
  result.forward_passes += 1;

  result.weights.assign(static_cast<std::size_t>(K), 0.0);
  const auto a = act.data();
  for (std::int64_t k0 = 0; k0 < K; k0 += options.mask_batch) {
    const std::int64_t n = std::min(options.mask_batch, K - k0);
    std::vector<Tensor> masked;
    masked.reserve(static_cast<std::size_t>(n));
    for (std::int64_t k = k0; k < k0 + n; ++k) {
      std::vector<double> plane(a.begin() + k * ah * aw, a.begin() + (k + 1) * ah * aw);
      const Tensor mask = normalize_mask(Tensor::from_data({ah, aw}, std::move(plane)), H, W);
      masked.push_back(apply_mask(image, mask));
    }
    Tensor batch;
    {
      NoGradGuard guard;
      batch = n == 1 ? masked.front() : ops::concat(masked, 0);
    }
    const auto scores = class_scores(model, batch, c, options.score);
    result.forward_passes += n;
    for (std::int64_t j = 0; j < n; ++j) {
      result.weights[static_cast<std::size_t>(k0 + j)] = scores[static_cast<std::size_t>(j)] - baseline;
    }
  }

  result.heatmap.values = weighted_activation_sum(act, result.weights);
  result.heatmap.layer = tap;
  result.heatmap.class_index = c;
  result.heatmap.state = Normalization::raw;
  return result;
}

std::vector<ScoreCamResult> explain_stages(const ModelGraph& model, const Tensor& image,
                                           const std::vector<std::string>& taps, std::int64_t c,
                                           const ScoreCamOptions& options) {
  std::vector<ScoreCamResult> out;
  out.reserve(taps.size());
  for (const auto& tap : taps) out.push_back(scorecam(model, image, tap, c, options));
  return out;
}

Heatmap upsample(const Heatmap& heatmap, std::int64_t h, std::int64_t w) {
  Heatmap out = heatmap;
  out.values = resize_plane(heatmap.values, h, w);
  std::vector<double> v(out.values.data().begin(), out.values.data().end());
  for (auto& x : v) x = std::max(x, 0.0);
  out.values = Tensor::from_data({h, w}, std::move(v));
  if (heatmap.state == Normalization::unit_max) out = unit_max(out);
  return out;
}

Heatmap unit_max(const Heatmap& heatmap) {
  Heatmap out = heatmap;
  const auto v = heatmap.values.data();
  const double hi = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  std::vector<double> scaled(v.begin(), v.end());
  if (hi > 0.0) {
    for (auto& x : scaled) x /= hi;
  }
  out.values = Tensor::from_data(heatmap.values.shape(), std::move(scaled));
  out.state = Normalization::unit_max;
  return out;
}

std::array<double, 3> colormap(double v) {
  struct Stop {
    double at;
    std::array<double, 3> rgb;
  };
  static constexpr Stop kStops[] = {{0.0, {0.0, 0.0, 0.5}},   {0.125, {0.0, 0.0, 1.0}},
                                    {0.375, {0.0, 1.0, 1.0}}, {0.625, {1.0, 1.0, 0.0}},
                                    {0.875, {1.0, 0.0, 0.0}}, {1.0, {0.5, 0.0, 0.0}}};
  v = std::clamp(v, 0.0, 1.0);
  for (std::size_t i = 1; i < std::size(kStops); ++i) {
    if (v <= kStops[i].at) {
      const auto& a = kStops[i - 1];
      const auto& b = kStops[i];
      const double t = (v - a.at) / (b.at - a.at);
      return {a.rgb[0] + t * (b.rgb[0] - a.rgb[0]), a.rgb[1] + t * (b.rgb[1] - a.rgb[1]),
              a.rgb[2] + t * (b.rgb[2] - a.rgb[2])};
    }
  }
  return kStops[std::size(kStops) - 1].rgb;
}

Tensor overlay(const Heatmap& heatmap, const Tensor& image, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValueError("overlay alpha must lie in [0, 1]");
  if (heatmap.state != Normalization::unit_max) {
    throw ValueError("overlay needs a unit-max heatmap");
  }
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw ShapeError("overlay expects a 1 x 3 x H x W image");
  }
  const std::int64_t H = image.dim(2);
  const std::int64_t W = image.dim(3);
  const Tensor heat = resize_plane(heatmap.values, H, W);
  std::vector<double> out(image.data().begin(), image.data().end());
  const auto hv = heat.data();
  for (std::int64_t i = 0; i < H * W; ++i) {
    const auto rgb = colormap(hv[static_cast<std::size_t>(i)]);
    for (std::int64_t c = 0; c < 3; ++c) {
      double& px = out[static_cast<std::size_t>(c * H * W + i)];
      px = alpha * rgb[static_cast<std::size_t>(c)] + (1.0 - alpha) * px;
    }
  }
  return Tensor::from_data(image.shape(), std::move(out));
}

}  // namespace tunnelcrack::scorecam
