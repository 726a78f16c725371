#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tunnelcrack {

using Shape = std::vector<std::int64_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents or ranks.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its documented domain.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced while finite checks are enabled.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autograd graph (non-scalar loss, consumed graph, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct TensorImpl;
struct GradNode;
}  // namespace detail

// Dense row-major double tensor with optional reverse-mode gradient tracking.
//
// A Tensor is a shared handle: copies alias the same storage. Operations are
// out-of-place, so a produced tensor is never modified afterwards except
// through mutable_data() on leaves (optimizer updates, running statistics).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t dim(std::size_t axis) const;
  std::int64_t numel() const;

  std::span<const double> data() const;
  // Writable view. Only permitted on tensors that are not the output of a
  // recorded operation.
  std::span<double> mutable_data();

  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  // Same values, fresh storage, no graph.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  // The graph is released afterwards; a second call raises GraphError.
  void backward() const;

  bool same_storage(const Tensor& other) const noexcept {
    return impl_ == other.impl_;
  }

  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  void require_defined() const;
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// Debug-mode check: when enabled every op output is scanned for NaN/Inf.
void set_finite_checks(bool enabled) noexcept;
bool finite_checks_enabled() noexcept;

}  // namespace tunnelcrack
