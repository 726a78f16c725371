#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tunnelcrack/tensor.hpp"

// Differentiable operations. All image tensors use B x C x H x W layout.
namespace tunnelcrack::ops {

using Pair = std::array<std::int64_t, 2>;

struct ConvParams {
  Pair stride{1, 1};
  Pair padding{0, 0};
  Pair dilation{1, 1};
  std::int64_t groups = 1;
};

// floor((in + 2*pad - dilation*(kernel-1) - 1)/stride) + 1; throws ShapeError
// when the result is not positive.
std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel,
                                std::int64_t pad, std::int64_t dilation,
                                std::int64_t stride);

// Cross-correlation (no kernel flip). weight is O x (C/groups) x kh x kw,
// bias (optional, undefined tensor for none) has O entries.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvParams& params);

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
  bool training = false;
};

// Inference: (x - running_mean) / sqrt(running_var + eps) * gamma + beta.
// Training: normalizes with biased batch statistics and updates the running
// buffers in place: r = (1 - momentum) * r + momentum * batch_stat, using the
// unbiased variance for running_var.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var,
                  const BatchNormOptions& options);

Tensor relu(const Tensor& input);

struct PoolParams {
  Pair window{2, 2};
  Pair stride{2, 2};
  Pair padding{0, 0};
};

// Padding acts as -infinity. padding must not exceed half the window so that
// every window covers at least one input element.
Tensor max_pool2d(const Tensor& input, const PoolParams& params);

// Mean over each window; padded positions are counted as zeros.
Tensor avg_pool2d(const Tensor& input, const PoolParams& params);

// B x C x H x W -> B x C x 1 x 1.
Tensor global_avg_pool(const Tensor& input);

// Half-pixel-center sampling, source coordinates clamped to the edge.
Tensor bilinear_resize(const Tensor& input, std::int64_t out_h,
                       std::int64_t out_w);

Tensor concat(const std::vector<Tensor>& inputs, std::size_t axis);

// Contiguous range [start, start + length) along axis.
Tensor slice(const Tensor& input, std::size_t axis, std::int64_t start,
             std::int64_t length);

// input B x F, weight O x F, bias O (optional): input * weight^T + bias.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& input, Shape shape);
// Collapses every axis after the first.
Tensor flatten(const Tensor& input);

Tensor softmax(const Tensor& logits, std::size_t axis);
Tensor log_softmax(const Tensor& logits, std::size_t axis);

// Mean of -log softmax(logits)[target] over all items. logits is B x K
// (targets: B labels) or B x K x H x W (targets: B*H*W labels, row-major).
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& input, double factor);
Tensor sum(const Tensor& input);
Tensor mean(const Tensor& input);

}  // namespace tunnelcrack::ops
