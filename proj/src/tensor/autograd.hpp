#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tunnelcrack/tensor.hpp"

namespace tunnelcrack::detail {

using Buffer = std::vector<double>;

// Maps the gradient of an op's output to one gradient buffer per recorded
// input. An empty buffer means "no contribution" for that input.
using BackwardFn = std::function<std::vector<Buffer>(const Buffer&)>;

struct GradNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  bool requires_grad = false;
  std::optional<Buffer> grad;
  std::shared_ptr<GradNode> grad_fn;
};

// Wraps an op result. Records a graph node when grad mode is on and any input
// requires grad; runs the finite check when enabled.
Tensor make_result(const char* op, Shape shape, Buffer values,
                   std::initializer_list<const Tensor*> inputs,
                   BackwardFn backward);
Tensor make_result(const char* op, Shape shape, Buffer values,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

bool needs_grad(const Tensor& t);

}  // namespace tunnelcrack::detail
