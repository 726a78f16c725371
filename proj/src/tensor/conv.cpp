#include <algorithm>
#include <string>

#include "autograd.hpp"
#include "tunnelcrack/ops.hpp"

namespace tunnelcrack::ops {

using detail::Buffer;

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel,
                                std::int64_t pad, std::int64_t dilation,
                                std::int64_t stride) {
  if (kernel <= 0 || stride <= 0 || dilation <= 0 || pad < 0) {
    throw ValueError("kernel, stride and dilation must be positive, padding "
                     "nonnegative");
  }
  const std::int64_t span = in + 2 * pad - dilation * (kernel - 1) - 1;
  if (span < 0) {
    throw ShapeError("non-positive output extent (in=" + std::to_string(in) +
                     ", kernel=" + std::to_string(kernel) + ")");
  }
  return span / stride + 1;
}

namespace {

struct ConvGeometry {
  std::int64_t batch, in_c, in_h, in_w;
  std::int64_t out_c, k_h, k_w, out_h, out_w;
  std::int64_t groups, in_cg, out_cg;
  ConvParams p;

  std::int64_t patch() const { return in_cg * k_h * k_w; }
  std::int64_t pixels() const { return out_h * out_w; }
  // 1x1, stride 1, no padding: the input plane is already the column matrix.
  bool pointwise() const {
    return k_h == 1 && k_w == 1 && p.stride[0] == 1 && p.stride[1] == 1 &&
           p.padding[0] == 0 && p.padding[1] == 0;
  }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight,
                           const Tensor& bias, const ConvParams& p) {
  if (input.rank() != 4) {
    throw ShapeError("conv2d input must be B x C x H x W, got " +
                     to_string(input.shape()));
  }
  if (weight.rank() != 4) {
    throw ShapeError("conv2d weight must be O x C/groups x kh x kw, got " +
                     to_string(weight.shape()));
  }
  ConvGeometry g{};
  g.p = p;
  g.batch = input.dim(0);
  g.in_c = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_c = weight.dim(0);
  g.k_h = weight.dim(2);
  g.k_w = weight.dim(3);
  g.groups = p.groups;
  if (g.groups <= 0 || g.in_c % g.groups != 0 || g.out_c % g.groups != 0) {
    throw ValueError("groups=" + std::to_string(g.groups) +
                     " must divide input channels " + std::to_string(g.in_c) +
                     " and output channels " + std::to_string(g.out_c));
  }
  g.in_cg = g.in_c / g.groups;
  g.out_cg = g.out_c / g.groups;
  if (weight.dim(1) != g.in_cg) {
    throw ShapeError("conv2d weight expects " + std::to_string(weight.dim(1)) +
                     " channels per group, input provides " +
                     std::to_string(g.in_cg));
  }
  if (bias.defined() && (bias.numel() != g.out_c)) {
    throw ShapeError("conv2d bias must have one entry per output channel");
  }
  g.out_h = conv_output_extent(g.in_h, g.k_h, p.padding[0], p.dilation[0],
                               p.stride[0]);
  g.out_w = conv_output_extent(g.in_w, g.k_w, p.padding[1], p.dilation[1],
                               p.stride[1]);
  return g;
}

// cols[(c*kh + i)*kw + j][oh*out_w + ow] = x[c][oh*sh - ph + i*dh][ow*sw - pw + j*dw]
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::int64_t P = g.pixels();
  for (std::int64_t c = 0; c < g.in_cg; ++c) {
    const double* plane = x + c * g.in_h * g.in_w;
    for (std::int64_t i = 0; i < g.k_h; ++i) {
      for (std::int64_t j = 0; j < g.k_w; ++j) {
        double* row = cols + ((c * g.k_h + i) * g.k_w + j) * P;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.p.stride[0] - g.p.padding[0] + i * g.p.dilation[0];
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.in_h) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + ih * g.in_w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.p.stride[1] - g.p.padding[1] + j * g.p.dilation[1];
            dst[ow] = (iw >= 0 && iw < g.in_w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* x) {
  const std::int64_t P = g.pixels();
  for (std::int64_t c = 0; c < g.in_cg; ++c) {
    double* plane = x + c * g.in_h * g.in_w;
    for (std::int64_t i = 0; i < g.k_h; ++i) {
      for (std::int64_t j = 0; j < g.k_w; ++j) {
        const double* row = cols + ((c * g.k_h + i) * g.k_w + j) * P;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.p.stride[0] - g.p.padding[0] + i * g.p.dilation[0];
          if (ih < 0 || ih >= g.in_h) continue;
          double* dst = plane + ih * g.in_w;
          const double* src = row + oh * g.out_w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.p.stride[1] - g.p.padding[1] + j * g.p.dilation[1];
            if (iw >= 0 && iw < g.in_w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvParams& params) {
  const ConvGeometry g = conv_geometry(input, weight, bias, params);
  const std::int64_t P = g.pixels();
  const std::int64_t K = g.patch();
  const bool pointwise = g.pointwise();

  const double* x = input.data().data();
  const double* w = weight.data().data();
  Buffer out(static_cast<std::size_t>(g.batch * g.out_c * P), 0.0);
  Buffer cols(pointwise ? 0 : static_cast<std::size_t>(K * P));

  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const double* xg = x + (b * g.in_c + grp * g.in_cg) * g.in_h * g.in_w;
      const double* src = xg;
      if (!pointwise) {
        im2col(g, xg, cols.data());
        src = cols.data();
      }
      for (std::int64_t o = 0; o < g.out_cg; ++o) {
        const std::int64_t oc = grp * g.out_cg + o;
        double* row = out.data() + (b * g.out_c + oc) * P;
        if (bias.defined()) std::fill(row, row + P, bias.data()[oc]);
        const double* wrow = w + oc * K;
        for (std::int64_t k = 0; k < K; ++k) {
          const double wv = wrow[k];
          const double* c = src + k * P;
          for (std::int64_t p = 0; p < P; ++p) row[p] += wv * c[p];
        }
      }
    }
  }

  Shape shape{g.batch, g.out_c, g.out_h, g.out_w};
  return detail::make_result(
      "conv2d", shape, std::move(out), {&input, &weight, &bias},
      [input, weight, bias, g](const Buffer& gout) {
        const std::int64_t P = g.pixels();
        const std::int64_t K = g.patch();
        const bool pointwise = g.pointwise();
        const bool want_x = detail::needs_grad(input);
        const bool want_w = detail::needs_grad(weight);
        const bool want_b = detail::needs_grad(bias);
        const double* x = input.data().data();
        const double* w = weight.data().data();

        Buffer gx(want_x ? static_cast<std::size_t>(input.numel()) : 0, 0.0);
        Buffer gw(want_w ? static_cast<std::size_t>(weight.numel()) : 0, 0.0);
        Buffer gb(want_b ? static_cast<std::size_t>(g.out_c) : 0, 0.0);
        Buffer cols(pointwise ? 0 : static_cast<std::size_t>(K * P));
        Buffer dcols(static_cast<std::size_t>(K * P));

        for (std::int64_t b = 0; b < g.batch; ++b) {
          for (std::int64_t grp = 0; grp < g.groups; ++grp) {
            const std::int64_t x_off = (b * g.in_c + grp * g.in_cg) * g.in_h * g.in_w;
            const double* gout_g = gout.data() + (b * g.out_c + grp * g.out_cg) * P;
            if (want_b) {
              for (std::int64_t o = 0; o < g.out_cg; ++o) {
                const double* row = gout_g + o * P;
                double s = 0.0;
                for (std::int64_t p = 0; p < P; ++p) s += row[p];
                gb[grp * g.out_cg + o] += s;
              }
            }
            if (want_w) {
              const double* src = x + x_off;
              if (!pointwise) {
                im2col(g, x + x_off, cols.data());
                src = cols.data();
              }
              for (std::int64_t o = 0; o < g.out_cg; ++o) {
                const double* row = gout_g + o * P;
                double* gwrow = gw.data() + (grp * g.out_cg + o) * K;
                for (std::int64_t k = 0; k < K; ++k) {
                  const double* c = src + k * P;
                  double s = 0.0;
                  for (std::int64_t p = 0; p < P; ++p) s += row[p] * c[p];
                  gwrow[k] += s;
                }
              }
            }
            if (want_x) {
              double* dst = pointwise ? gx.data() + x_off : dcols.data();
              if (!pointwise) std::fill(dcols.begin(), dcols.end(), 0.0);
              for (std::int64_t o = 0; o < g.out_cg; ++o) {
                const double* row = gout_g + o * P;
                const double* wrow = w + (grp * g.out_cg + o) * K;
                for (std::int64_t k = 0; k < K; ++k) {
                  const double wv = wrow[k];
                  double* d = dst + k * P;
                  for (std::int64_t p = 0; p < P; ++p) d[p] += wv * row[p];
                }
              }
              if (!pointwise) col2im_add(g, dcols.data(), gx.data() + x_off);
            }
          }
        }
        return std::vector<Buffer>{std::move(gx), std::move(gw), std::move(gb)};
      });
}

}  // namespace tunnelcrack::ops
