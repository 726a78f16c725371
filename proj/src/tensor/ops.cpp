#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "autograd.hpp"
#include "tunnelcrack/ops.hpp"

namespace tunnelcrack::ops {

using detail::Buffer;

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(rank) +
                     ", got " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + to_string(a.shape()) +
                     " vs " + to_string(b.shape()));
  }
}

// Splits a shape around `axis` into outer * extent * inner.
struct AxisView {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError("axis out of range");
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

double lerp(double a, double b, double t) { return a + t * (b - a); }

}  // namespace

// ---------------------------------------------------------------------------
// Normalization

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var,
                  const BatchNormOptions& options) {
  if (input.rank() < 2) {
    throw ShapeError("batch_norm expects at least B x C, got " +
                     to_string(input.shape()));
  }
  if (!(options.eps >= 0.0)) throw ValueError("batch_norm eps must be >= 0");
  const std::int64_t B = input.dim(0);
  const std::int64_t C = input.dim(1);
  const std::int64_t inner = input.numel() / (B * C);
  for (const Tensor* t : std::initializer_list<const Tensor*>{
           &gamma, &beta, &running_mean, &running_var}) {
    if (!t->defined() || t->numel() != C) {
      throw ShapeError("batch_norm per-channel parameters must have " +
                       std::to_string(C) + " entries");
    }
  }
  const std::int64_t n = B * inner;
  if (options.training && n < 2) {
    throw ValueError("batch_norm training needs more than one value per channel");
  }

  const double* x = input.data().data();
  const double* gm = gamma.data().data();
  const double* bt = beta.data().data();
  Buffer xhat(static_cast<std::size_t>(input.numel()));
  Buffer inv_std(static_cast<std::size_t>(C));
  Buffer out(xhat.size());

  for (std::int64_t c = 0; c < C; ++c) {
    double mu, var;
    if (options.training) {
      double s = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        const double* px = x + (b * C + c) * inner;
        for (std::int64_t i = 0; i < inner; ++i) s += px[i];
      }
      mu = s / static_cast<double>(n);
      double ss = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        const double* px = x + (b * C + c) * inner;
        for (std::int64_t i = 0; i < inner; ++i) {
          const double d = px[i] - mu;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(n);
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      const double m = options.momentum;
      rm[c] = (1.0 - m) * rm[c] + m * mu;
      rv[c] = (1.0 - m) * rv[c] + m * (ss / static_cast<double>(n - 1));
    } else {
      mu = running_mean.data()[c];
      var = running_var.data()[c];
    }
    const double is = 1.0 / std::sqrt(var + options.eps);
    inv_std[c] = is;
    for (std::int64_t b = 0; b < B; ++b) {
      const std::int64_t off = (b * C + c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        const double h = (x[off + i] - mu) * is;
        xhat[off + i] = h;
        out[off + i] = h * gm[c] + bt[c];
      }
    }
  }

  const bool training = options.training;
  return detail::make_result(
      "batch_norm", input.shape(), std::move(out), {&input, &gamma, &beta},
      [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
       B, C, inner, n, training](const Buffer& g) {
        const double* gm = gamma.data().data();
        Buffer gx(detail::needs_grad(input) ? xhat.size() : 0);
        Buffer gg(detail::needs_grad(gamma) ? static_cast<std::size_t>(C) : 0);
        Buffer gb(detail::needs_grad(beta) ? static_cast<std::size_t>(C) : 0);
        for (std::int64_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::int64_t b = 0; b < B; ++b) {
            const std::int64_t off = (b * C + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
              sum_g += g[off + i];
              sum_gh += g[off + i] * xhat[off + i];
            }
          }
          if (!gg.empty()) gg[c] = sum_gh;
          if (!gb.empty()) gb[c] = sum_g;
          if (gx.empty()) continue;
          const double k = gm[c] * inv_std[c];
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::int64_t b = 0; b < B; ++b) {
            const std::int64_t off = (b * C + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
              if (training) {
                gx[off + i] = k * (g[off + i] - sum_g * inv_n -
                                   xhat[off + i] * sum_gh * inv_n);
              } else {
                gx[off + i] = k * g[off + i];
              }
            }
          }
        }
        return std::vector<Buffer>{std::move(gx), std::move(gg), std::move(gb)};
      });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor relu(const Tensor& input) {
  const auto x = input.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] <= 0.0 ? 0.0 : x[i];  // NaN passes through
  return detail::make_result("relu", input.shape(), std::move(out), {&input},
                             [input](const Buffer& g) {
                               const auto x = input.data();
                               Buffer gx(x.size());
                               for (std::size_t i = 0; i < x.size(); ++i) {
                                 gx[i] = x[i] > 0.0 ? g[i] : 0.0;
                               }
                               return std::vector<Buffer>{std::move(gx)};
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result("add", a.shape(), std::move(out), {&a, &b},
                             [](const Buffer& g) {
                               return std::vector<Buffer>{g, g};
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result(
      "mul", a.shape(), std::move(out), {&a, &b}, [a, b](const Buffer& g) {
        const auto x = a.data();
        const auto y = b.data();
        Buffer ga(detail::needs_grad(a) ? g.size() : 0);
        Buffer gb(detail::needs_grad(b) ? g.size() : 0);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * y[i];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = g[i] * x[i];
        return std::vector<Buffer>{std::move(ga), std::move(gb)};
      });
}

Tensor scale(const Tensor& input, double factor) {
  const auto x = input.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return detail::make_result("scale", input.shape(), std::move(out), {&input},
                             [factor](const Buffer& g) {
                               Buffer gx(g.size());
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 gx[i] = g[i] * factor;
                               }
                               return std::vector<Buffer>{std::move(gx)};
                             });
}

Tensor sum(const Tensor& input) {
  double s = 0.0;
  for (double v : input.data()) s += v;
  const auto count = static_cast<std::size_t>(input.numel());
  return detail::make_result("sum", {1}, {s}, {&input},
                             [count](const Buffer& g) {
                               return std::vector<Buffer>{Buffer(count, g[0])};
                             });
}

Tensor mean(const Tensor& input) {
  return scale(sum(input), 1.0 / static_cast<double>(input.numel()));
}

// ---------------------------------------------------------------------------
// Pooling

Tensor max_pool2d(const Tensor& input, const PoolParams& p) {
  require_rank(input, 4, "max_pool2d");
  for (int a = 0; a < 2; ++a) {
    if (p.window[a] <= 0 || p.stride[a] <= 0 || p.padding[a] < 0) {
      throw ValueError("max_pool2d window/stride must be positive");
    }
    if (2 * p.padding[a] > p.window[a]) {
      throw ValueError("max_pool2d padding must not exceed half the window");
    }
  }
  const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                     W = input.dim(3);
  const std::int64_t Ho = conv_output_extent(H, p.window[0], p.padding[0], 1, p.stride[0]);
  const std::int64_t Wo = conv_output_extent(W, p.window[1], p.padding[1], 1, p.stride[1]);
  const double* x = input.data().data();
  Buffer out(static_cast<std::size_t>(B * C * Ho * Wo));
  std::vector<std::int64_t> argmax(out.size());
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* plane = x + bc * H * W;
    for (std::int64_t oh = 0; oh < Ho; ++oh) {
      for (std::int64_t ow = 0; ow < Wo; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t i = 0; i < p.window[0]; ++i) {
          const std::int64_t ih = oh * p.stride[0] - p.padding[0] + i;
          if (ih < 0 || ih >= H) continue;
          for (std::int64_t j = 0; j < p.window[1]; ++j) {
            const std::int64_t iw = ow * p.stride[1] - p.padding[1] + j;
            if (iw < 0 || iw >= W) continue;
            const double v = plane[ih * W + iw];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = ih * W + iw;
            }
          }
        }
        const std::int64_t o = (bc * Ho + oh) * Wo + ow;
        out[o] = best;
        argmax[o] = bc * H * W + best_idx;
      }
    }
  }
  const auto in_count = static_cast<std::size_t>(input.numel());
  return detail::make_result(
      "max_pool2d", {B, C, Ho, Wo}, std::move(out), {&input},
      [argmax = std::move(argmax), in_count](const Buffer& g) {
        Buffer gx(in_count, 0.0);
        for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
        return std::vector<Buffer>{std::move(gx)};
      });
}

Tensor avg_pool2d(const Tensor& input, const PoolParams& p) {
  require_rank(input, 4, "avg_pool2d");
  for (int a = 0; a < 2; ++a) {
    if (p.window[a] <= 0 || p.stride[a] <= 0 || p.padding[a] < 0) {
      throw ValueError("avg_pool2d window/stride must be positive");
    }
  }
  const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                     W = input.dim(3);
  const std::int64_t Ho = conv_output_extent(H, p.window[0], p.padding[0], 1, p.stride[0]);
  const std::int64_t Wo = conv_output_extent(W, p.window[1], p.padding[1], 1, p.stride[1]);
  const double inv_area = 1.0 / static_cast<double>(p.window[0] * p.window[1]);
  const double* x = input.data().data();
  Buffer out(static_cast<std::size_t>(B * C * Ho * Wo));
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* plane = x + bc * H * W;
    for (std::int64_t oh = 0; oh < Ho; ++oh) {
      for (std::int64_t ow = 0; ow < Wo; ++ow) {
        double s = 0.0;
        for (std::int64_t i = 0; i < p.window[0]; ++i) {
          const std::int64_t ih = oh * p.stride[0] - p.padding[0] + i;
          if (ih < 0 || ih >= H) continue;
          for (std::int64_t j = 0; j < p.window[1]; ++j) {
            const std::int64_t iw = ow * p.stride[1] - p.padding[1] + j;
            if (iw >= 0 && iw < W) s += plane[ih * W + iw];
          }
        }
        out[(bc * Ho + oh) * Wo + ow] = s * inv_area;
      }
    }
  }
  return detail::make_result(
      "avg_pool2d", {B, C, Ho, Wo}, std::move(out), {&input},
      [p, B, C, H, W, Ho, Wo, inv_area](const Buffer& g) {
        Buffer gx(static_cast<std::size_t>(B * C * H * W), 0.0);
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          double* plane = gx.data() + bc * H * W;
          for (std::int64_t oh = 0; oh < Ho; ++oh) {
            for (std::int64_t ow = 0; ow < Wo; ++ow) {
              const double v = g[(bc * Ho + oh) * Wo + ow] * inv_area;
              for (std::int64_t i = 0; i < p.window[0]; ++i) {
                const std::int64_t ih = oh * p.stride[0] - p.padding[0] + i;
                if (ih < 0 || ih >= H) continue;
                for (std::int64_t j = 0; j < p.window[1]; ++j) {
                  const std::int64_t iw = ow * p.stride[1] - p.padding[1] + j;
                  if (iw >= 0 && iw < W) plane[ih * W + iw] += v;
                }
              }
            }
          }
        }
        return std::vector<Buffer>{std::move(gx)};
      });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool");
  const std::int64_t B = input.dim(0), C = input.dim(1);
  const std::int64_t HW = input.dim(2) * input.dim(3);
  const double* x = input.data().data();
  Buffer out(static_cast<std::size_t>(B * C));
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    double s = 0.0;
    for (std::int64_t i = 0; i < HW; ++i) s += x[bc * HW + i];
    out[bc] = s / static_cast<double>(HW);
  }
  return detail::make_result("global_avg_pool", {B, C, 1, 1}, std::move(out),
                             {&input}, [HW](const Buffer& g) {
                               Buffer gx(g.size() * HW);
                               const double inv = 1.0 / static_cast<double>(HW);
                               for (std::size_t bc = 0; bc < g.size(); ++bc) {
                                 std::fill_n(gx.begin() + bc * HW, HW, g[bc] * inv);
                               }
                               return std::vector<Buffer>{std::move(gx)};
                             });
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

struct Tap {
  std::int64_t i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    taps[o] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& input, std::int64_t out_h,
                       std::int64_t out_w) {
  require_rank(input, 4, "bilinear_resize");
  if (out_h < 1 || out_w < 1) {
    throw ValueError("bilinear_resize target must be at least 1x1");
  }
  const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                     W = input.dim(3);
  auto ty = bilinear_taps(H, out_h);
  auto tx = bilinear_taps(W, out_w);
  const double* x = input.data().data();
  Buffer out(static_cast<std::size_t>(B * C * out_h * out_w));
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* plane = x + bc * H * W;
    double* dst = out.data() + bc * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& y = ty[oy];
      const double* r0 = plane + y.i0 * W;
      const double* r1 = plane + y.i1 * W;
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& t = tx[ox];
        const double top = lerp(r0[t.i0], r0[t.i1], t.frac);
        const double bottom = lerp(r1[t.i0], r1[t.i1], t.frac);
        dst[oy * out_w + ox] = lerp(top, bottom, y.frac);
      }
    }
  }
  return detail::make_result(
      "bilinear_resize", {B, C, out_h, out_w}, std::move(out), {&input},
      [ty = std::move(ty), tx = std::move(tx), B, C, H, W, out_h,
       out_w](const Buffer& g) {
        Buffer gx(static_cast<std::size_t>(B * C * H * W), 0.0);
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          double* plane = gx.data() + bc * H * W;
          const double* src = g.data() + bc * out_h * out_w;
          for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const Tap& y = ty[oy];
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
              const Tap& t = tx[ox];
              const double v = src[oy * out_w + ox];
              const double top = v * (1.0 - y.frac);
              const double bottom = v * y.frac;
              plane[y.i0 * W + t.i0] += top * (1.0 - t.frac);
              plane[y.i0 * W + t.i1] += top * t.frac;
              plane[y.i1 * W + t.i0] += bottom * (1.0 - t.frac);
              plane[y.i1 * W + t.i1] += bottom * t.frac;
            }
          }
        }
        return std::vector<Buffer>{std::move(gx)};
      });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(const std::vector<Tensor>& inputs, std::size_t axis) {
  if (inputs.empty()) throw ValueError("concat of an empty list");
  const Shape& first = inputs.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  std::vector<std::int64_t> extents;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat off-axis mismatch: " + to_string(first) +
                         " vs " + to_string(s));
      }
    }
    extents.push_back(s[axis]);
    shape[axis] += s[axis];
  }
  const AxisView v = axis_view(shape, axis);
  Buffer out(static_cast<std::size_t>(numel(shape)));
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const double* src = inputs[k].data().data();
    const std::int64_t chunk = extents[k] * v.inner;
    for (std::int64_t o = 0; o < v.outer; ++o) {
      std::copy_n(src + o * chunk, chunk,
                  out.data() + o * v.extent * v.inner + offset * v.inner);
    }
    offset += extents[k];
  }
  return detail::make_result(
      "concat", shape, std::move(out), inputs,
      [extents, v, inputs](const Buffer& g) {
        std::vector<Buffer> grads(extents.size());
        std::int64_t offset = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
          const std::int64_t chunk = extents[k] * v.inner;
          if (detail::needs_grad(inputs[k])) {
            grads[k].resize(static_cast<std::size_t>(chunk * v.outer));
            for (std::int64_t o = 0; o < v.outer; ++o) {
              std::copy_n(g.data() + o * v.extent * v.inner + offset * v.inner,
                          chunk, grads[k].data() + o * chunk);
            }
          }
          offset += extents[k];
        }
        return grads;
      });
}

Tensor slice(const Tensor& input, std::size_t axis, std::int64_t start,
             std::int64_t length) {
  const Shape& in_shape = input.shape();
  const AxisView v = axis_view(in_shape, axis);
  if (start < 0 || length <= 0 || start + length > v.extent) {
    throw ShapeError("slice range out of bounds");
  }
  Shape shape = in_shape;
  shape[axis] = length;
  const double* x = input.data().data();
  Buffer out(static_cast<std::size_t>(numel(shape)));
  const std::int64_t chunk = length * v.inner;
  for (std::int64_t o = 0; o < v.outer; ++o) {
    std::copy_n(x + o * v.extent * v.inner + start * v.inner, chunk,
                out.data() + o * chunk);
  }
  const auto in_count = static_cast<std::size_t>(input.numel());
  return detail::make_result(
      "slice", shape, std::move(out), {&input},
      [v, start, chunk, in_count](const Buffer& g) {
        Buffer gx(in_count, 0.0);
        for (std::int64_t o = 0; o < v.outer; ++o) {
          std::copy_n(g.data() + o * chunk, chunk,
                      gx.data() + o * v.extent * v.inner + start * v.inner);
        }
        return std::vector<Buffer>{std::move(gx)};
      });
}

Tensor reshape(const Tensor& input, Shape shape) {
  if (numel(shape) != input.numel()) {
    throw ShapeError("reshape " + to_string(input.shape()) + " -> " +
                     to_string(shape) + " changes the element count");
  }
  const auto x = input.data();
  return detail::make_result("reshape", std::move(shape), Buffer(x.begin(), x.end()),
                             {&input}, [](const Buffer& g) {
                               return std::vector<Buffer>{g};
                             });
}

Tensor flatten(const Tensor& input) {
  const std::int64_t b = input.dim(0);
  return reshape(input, {b, input.numel() / b});
}

// ---------------------------------------------------------------------------
// Dense layer

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::int64_t B = input.dim(0), F = input.dim(1), O = weight.dim(0);
  if (weight.dim(1) != F) {
    throw ShapeError("linear: input has " + std::to_string(F) +
                     " features, weight expects " + std::to_string(weight.dim(1)));
  }
  if (bias.defined() && bias.numel() != O) {
    throw ShapeError("linear: bias must have one entry per output");
  }
  const double* x = input.data().data();
  const double* w = weight.data().data();
  Buffer out(static_cast<std::size_t>(B * O));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t o = 0; o < O; ++o) {
      double s = bias.defined() ? bias.data()[o] : 0.0;
      for (std::int64_t f = 0; f < F; ++f) s += x[b * F + f] * w[o * F + f];
      out[b * O + o] = s;
    }
  }
  return detail::make_result(
      "linear", {B, O}, std::move(out), {&input, &weight, &bias},
      [input, weight, bias, B, F, O](const Buffer& g) {
        const double* x = input.data().data();
        const double* w = weight.data().data();
        Buffer gx(detail::needs_grad(input) ? static_cast<std::size_t>(B * F) : 0, 0.0);
        Buffer gw(detail::needs_grad(weight) ? static_cast<std::size_t>(O * F) : 0, 0.0);
        Buffer gb(detail::needs_grad(bias) ? static_cast<std::size_t>(O) : 0, 0.0);
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t o = 0; o < O; ++o) {
            const double go = g[b * O + o];
            if (!gb.empty()) gb[o] += go;
            if (!gx.empty()) {
              for (std::int64_t f = 0; f < F; ++f) gx[b * F + f] += go * w[o * F + f];
            }
            if (!gw.empty()) {
              for (std::int64_t f = 0; f < F; ++f) gw[o * F + f] += go * x[b * F + f];
            }
          }
        }
        return std::vector<Buffer>{std::move(gx), std::move(gw), std::move(gb)};
      });
}

// ---------------------------------------------------------------------------
// Softmax family

Tensor softmax(const Tensor& logits, std::size_t axis) {
  const AxisView v = axis_view(logits.shape(), axis);
  const double* x = logits.data().data();
  Buffer out(static_cast<std::size_t>(logits.numel()));
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t i = 0; i < v.inner; ++i) {
      const std::int64_t base = o * v.extent * v.inner + i;
      double m = x[base];
      for (std::int64_t k = 1; k < v.extent; ++k) m = std::max(m, x[base + k * v.inner]);
      double s = 0.0;
      for (std::int64_t k = 0; k < v.extent; ++k) {
        const double e = std::exp(x[base + k * v.inner] - m);
        out[base + k * v.inner] = e;
        s += e;
      }
      for (std::int64_t k = 0; k < v.extent; ++k) out[base + k * v.inner] /= s;
    }
  }
  Buffer probs = out;
  return detail::make_result(
      "softmax", logits.shape(), std::move(out), {&logits},
      [v, probs = std::move(probs)](const Buffer& g) {
        Buffer gx(probs.size());
        for (std::int64_t o = 0; o < v.outer; ++o) {
          for (std::int64_t i = 0; i < v.inner; ++i) {
            const std::int64_t base = o * v.extent * v.inner + i;
            double dot = 0.0;
            for (std::int64_t k = 0; k < v.extent; ++k) {
              dot += g[base + k * v.inner] * probs[base + k * v.inner];
            }
            for (std::int64_t k = 0; k < v.extent; ++k) {
              const auto idx = base + k * v.inner;
              gx[idx] = probs[idx] * (g[idx] - dot);
            }
          }
        }
        return std::vector<Buffer>{std::move(gx)};
      });
}

Tensor log_softmax(const Tensor& logits, std::size_t axis) {
  const AxisView v = axis_view(logits.shape(), axis);
  const double* x = logits.data().data();
  Buffer out(static_cast<std::size_t>(logits.numel()));
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t i = 0; i < v.inner; ++i) {
      const std::int64_t base = o * v.extent * v.inner + i;
      double m = x[base];
      for (std::int64_t k = 1; k < v.extent; ++k) m = std::max(m, x[base + k * v.inner]);
      double s = 0.0;
      for (std::int64_t k = 0; k < v.extent; ++k) s += std::exp(x[base + k * v.inner] - m);
      const double lse = m + std::log(s);
      for (std::int64_t k = 0; k < v.extent; ++k) {
        out[base + k * v.inner] = x[base + k * v.inner] - lse;
      }
    }
  }
  Buffer logp = out;
  return detail::make_result(
      "log_softmax", logits.shape(), std::move(out), {&logits},
      [v, logp = std::move(logp)](const Buffer& g) {
        Buffer gx(logp.size());
        for (std::int64_t o = 0; o < v.outer; ++o) {
          for (std::int64_t i = 0; i < v.inner; ++i) {
            const std::int64_t base = o * v.extent * v.inner + i;
            double gs = 0.0;
            for (std::int64_t k = 0; k < v.extent; ++k) gs += g[base + k * v.inner];
            for (std::int64_t k = 0; k < v.extent; ++k) {
              const auto idx = base + k * v.inner;
              gx[idx] = g[idx] - std::exp(logp[idx]) * gs;
            }
          }
        }
        return std::vector<Buffer>{std::move(gx)};
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 && logits.rank() != 4) {
    throw ShapeError("cross_entropy expects B x K or B x K x H x W logits");
  }
  const AxisView v = axis_view(logits.shape(), 1);
  const std::int64_t items = v.outer * v.inner;
  if (static_cast<std::int64_t>(targets.size()) != items) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(items) + " items");
  }
  for (int t : targets) {
    if (t < 0 || t >= v.extent) {
      throw ValueError("cross_entropy target " + std::to_string(t) +
                       " outside [0, " + std::to_string(v.extent) + ")");
    }
  }
  const double* x = logits.data().data();
  Buffer probs(static_cast<std::size_t>(logits.numel()));
  double total = 0.0;
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t i = 0; i < v.inner; ++i) {
      const std::int64_t base = o * v.extent * v.inner + i;
      double m = x[base];
      for (std::int64_t k = 1; k < v.extent; ++k) m = std::max(m, x[base + k * v.inner]);
      double s = 0.0;
      for (std::int64_t k = 0; k < v.extent; ++k) {
        const double e = std::exp(x[base + k * v.inner] - m);
        probs[base + k * v.inner] = e;
        s += e;
      }
      for (std::int64_t k = 0; k < v.extent; ++k) probs[base + k * v.inner] /= s;
      const int t = targets[o * v.inner + i];
      total += -(x[base + t * v.inner] - m - std::log(s));
    }
  }
  const double inv_items = 1.0 / static_cast<double>(items);
  std::vector<int> labels(targets.begin(), targets.end());
  return detail::make_result(
      "cross_entropy", {1}, {total * inv_items}, {&logits},
      [v, probs = std::move(probs), labels = std::move(labels),
       inv_items](const Buffer& g) {
        Buffer gx(probs.size());
        const double k0 = g[0] * inv_items;
        for (std::size_t i = 0; i < probs.size(); ++i) gx[i] = probs[i] * k0;
        for (std::int64_t o = 0; o < v.outer; ++o) {
          for (std::int64_t i = 0; i < v.inner; ++i) {
            const int t = labels[o * v.inner + i];
            gx[o * v.extent * v.inner + t * v.inner + i] -= k0;
          }
        }
        return std::vector<Buffer>{std::move(gx)};
      });
}

}  // namespace tunnelcrack::ops
