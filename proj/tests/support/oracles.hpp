#pragma once

// Independent reference implementations used only by tests. Nothing in here
// calls into the optimized kernels it is compared against.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "tunnelcrack/ops.hpp"
#include "tunnelcrack/random.hpp"
#include "tunnelcrack/tensor.hpp"

namespace oracle {

using tunnelcrack::Shape;
using tunnelcrack::Tensor;

// Direct evaluation of the cross-correlation definition, one output element
// at a time.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, const Shape& xs,
                                        const std::vector<double>& w, const Shape& ws,
                                        const std::vector<double>* bias,
                                        const tunnelcrack::ops::ConvParams& p) {
  const auto B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const auto O = ws[0], Cg = ws[1], KH = ws[2], KW = ws[3];
  const auto G = p.groups;
  const auto Og = O / G;
  const auto Ho = (H + 2 * p.padding[0] - p.dilation[0] * (KH - 1) - 1) / p.stride[0] + 1;
  const auto Wo = (W + 2 * p.padding[1] - p.dilation[1] * (KW - 1) - 1) / p.stride[1] + 1;
  std::vector<double> out(static_cast<std::size_t>(B * O * Ho * Wo), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          double acc = bias ? (*bias)[o] : 0.0;
          const auto g = o / Og;
          for (std::int64_t c = 0; c < Cg; ++c)
            for (std::int64_t i = 0; i < KH; ++i)
              for (std::int64_t j = 0; j < KW; ++j) {
                const auto ih = oh * p.stride[0] - p.padding[0] + i * p.dilation[0];
                const auto iw = ow * p.stride[1] - p.padding[1] + j * p.dilation[1];
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                const auto ic = g * Cg + c;
                acc += x[((b * C + ic) * H + ih) * W + iw] *
                       w[((o * Cg + c) * KH + i) * KW + j];
              }
          out[((b * O + o) * Ho + oh) * Wo + ow] = acc;
        }
  (void)C;
  return out;
}

inline std::vector<double> naive_max_pool(const std::vector<double>& x, const Shape& xs,
                                          std::int64_t window, std::int64_t stride) {
  const auto B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const auto Ho = (H - window) / stride + 1;
  const auto Wo = (W - window) / stride + 1;
  std::vector<double> out;
  for (std::int64_t bc = 0; bc < B * C; ++bc)
    for (std::int64_t oh = 0; oh < Ho; ++oh)
      for (std::int64_t ow = 0; ow < Wo; ++ow) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::int64_t i = 0; i < window; ++i)
          for (std::int64_t j = 0; j < window; ++j)
            m = std::max(m, x[(bc * H + oh * stride + i) * W + ow * stride + j]);
        out.push_back(m);
      }
  return out;
}

inline std::vector<double> to_vec(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

inline double max_abs_diff(const std::vector<double>& a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : std::numeric_limits<double>::infinity();
}

// Builds a scalar objective from input leaves.
using Objective = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked_values = 0;
};

// Compares reverse-mode gradients against central differences. The relative
// error of each input is ||analytic - numeric|| / max(||analytic||, ||numeric||).
inline GradCheckResult gradcheck(const Objective& f, const std::vector<Tensor>& inputs,
                                 double h = 1e-5) {
  std::vector<Tensor> leaves;
  for (const auto& t : inputs) {
    leaves.push_back(Tensor::from_data(t.shape(), to_vec(t), true));
  }
  Tensor loss = f(leaves);
  loss.backward();

  GradCheckResult result;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    std::vector<double> analytic = leaves[i].has_grad()
                                       ? std::vector<double>(leaves[i].grad().begin(),
                                                             leaves[i].grad().end())
                                       : std::vector<double>(leaves[i].numel(), 0.0);
    std::vector<double> numeric(analytic.size());
    tunnelcrack::NoGradGuard guard;
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      auto eval = [&](double delta) {
        std::vector<Tensor> perturbed;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          auto v = to_vec(inputs[k]);
          if (k == i) v[j] += delta;
          perturbed.push_back(Tensor::from_data(inputs[k].shape(), std::move(v)));
        }
        return f(perturbed).item();
      };
      numeric[j] = (eval(h) - eval(-h)) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      diff += (analytic[j] - numeric[j]) * (analytic[j] - numeric[j]);
      na += analytic[j] * analytic[j];
      nn += numeric[j] * numeric[j];
    }
    const double denom = std::sqrt(std::max(na, nn));
    const double rel = denom > 1e-10 ? std::sqrt(diff) / denom : std::sqrt(diff);
    result.max_relative_error = std::max(result.max_relative_error, rel);
    result.checked_values += numeric.size();
  }
  return result;
}

// sum(out * R) for a fixed random R, turning any op into a scalar objective
// with non-trivial upstream gradients.
inline Tensor weighted_sum(const Tensor& out, std::uint64_t seed) {
  tunnelcrack::Rng rng(seed);
  auto r = tunnelcrack::randn(out.shape(), rng);
  return tunnelcrack::ops::sum(tunnelcrack::ops::mul(out, r));
}

}  // namespace oracle
