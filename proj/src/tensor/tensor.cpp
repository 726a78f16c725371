#include "tunnelcrack/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "autograd.hpp"

namespace tunnelcrack {

namespace {
thread_local bool g_grad_enabled = true;
bool g_finite_checks = false;
}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return g_grad_enabled; }
void set_finite_checks(bool enabled) noexcept { g_finite_checks = enabled; }
bool finite_checks_enabled() noexcept { return g_finite_checks; }

namespace {

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent <= 0) {
      throw ShapeError("tensor extents must be positive, got " +
                       to_string(shape));
    }
  }
}

void check_finite(const char* op, const detail::Buffer& values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(static_cast<std::size_t>(tunnelcrack::numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != tunnelcrack::numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + to_string(shape));
  }
  if (g_finite_checks) check_finite("from_data", values);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

void Tensor::require_defined() const {
  if (!impl_) throw ValueError("operation on undefined tensor");
}

const Shape& Tensor::shape() const {
  require_defined();
  return impl_->shape;
}

std::int64_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     to_string(s));
  }
  return s[axis];
}

std::int64_t Tensor::numel() const {
  require_defined();
  return static_cast<std::int64_t>(impl_->data.size());
}

std::span<const double> Tensor::data() const {
  require_defined();
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined();
  if (impl_->grad_fn) {
    throw GraphError("mutable_data() on a recorded op output");
  }
  return impl_->data;
}

double Tensor::item() const {
  require_defined();
  if (impl_->data.size() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " +
                     to_string(impl_->shape));
  }
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw ShapeError("index rank does not match tensor rank");
  }
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[axis]) throw ShapeError("index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const {
  require_defined();
  return impl_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool flag) {
  require_defined();
  if (impl_->grad_fn && !flag) {
    throw GraphError("cannot clear requires_grad on a recorded op output");
  }
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const {
  require_defined();
  return !impl_->grad_fn;
}

bool Tensor::has_grad() const {
  require_defined();
  return impl_->grad.has_value();
}

std::span<const double> Tensor::grad() const {
  require_defined();
  if (!impl_->grad) throw GraphError("tensor has no gradient");
  return *impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  auto g = grad();
  return from_data(impl_->shape, {g.begin(), g.end()});
}

void Tensor::zero_grad() {
  require_defined();
  impl_->grad.reset();
}

Tensor Tensor::clone() const {
  require_defined();
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

void Tensor::backward() const {
  require_defined();
  if (impl_->data.size() != 1) {
    throw GraphError("backward() requires a scalar loss, got shape " +
                     to_string(impl_->shape));
  }
  if (!impl_->requires_grad) {
    throw GraphError("backward() on a tensor that does not require grad");
  }
  if (impl_->grad_fn && impl_->grad_fn->consumed) {
    throw GraphError("graph already consumed by a previous backward()");
  }

  // Reverse topological order via iterative post-order DFS.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && fn->consumed) {
      throw GraphError("graph already consumed by a previous backward()");
    }
    if (fn && next < fn->inputs.size()) {
      detail::TensorImpl* child = fn->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  std::unordered_map<detail::TensorImpl*, detail::Buffer> grads;
  grads[impl_.get()] = detail::Buffer{1.0};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    detail::Buffer g = std::move(found->second);
    grads.erase(found);
    if (!node->grad_fn) {
      if (!node->grad) {
        node->grad = std::move(g);
      } else {
        auto& acc = *node->grad;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
      }
      continue;
    }
    auto& fn = *node->grad_fn;
    std::vector<detail::Buffer> input_grads = fn.backward(g);
    for (std::size_t i = 0; i < fn.inputs.size(); ++i) {
      detail::TensorImpl* input = fn.inputs[i].get();
      if (!input->requires_grad || i >= input_grads.size() ||
          input_grads[i].empty()) {
        continue;
      }
      auto [slot, inserted] = grads.try_emplace(input);
      if (inserted) {
        slot->second = std::move(input_grads[i]);
      } else {
        auto& acc = slot->second;
        const auto& add = input_grads[i];
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += add[j];
      }
    }
  }

  for (auto* node : order) {
    if (node->grad_fn) {
      node->grad_fn->consumed = true;
      node->grad_fn->backward = nullptr;
      node->grad_fn->inputs.clear();
    }
  }
}

namespace detail {

bool needs_grad(const Tensor& t) {
  return t.defined() && t.impl()->requires_grad;
}

namespace {

Tensor finish(const char* op, Shape shape, Buffer values,
              std::vector<std::shared_ptr<TensorImpl>> recorded, bool track,
              BackwardFn backward) {
  if (g_finite_checks) check_finite(op, values);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  if (track) {
    auto node = std::make_shared<GradNode>();
    node->op = op;
    node->inputs = std::move(recorded);
    node->backward = std::move(backward);
    impl->grad_fn = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor(std::move(impl));
}

}  // namespace

Tensor make_result(const char* op, Shape shape, Buffer values,
                   std::initializer_list<const Tensor*> inputs,
                   BackwardFn backward) {
  bool track = false;
  std::vector<std::shared_ptr<TensorImpl>> recorded;
  if (g_grad_enabled) {
    for (const Tensor* t : inputs) {
      if (t && t->defined()) {
        recorded.push_back(t->impl());
        track = track || t->impl()->requires_grad;
      } else {
        recorded.push_back(std::make_shared<TensorImpl>());
      }
    }
  }
  if (!track) recorded.clear();
  return finish(op, std::move(shape), std::move(values), std::move(recorded),
                track, track ? std::move(backward) : BackwardFn{});
}

Tensor make_result(const char* op, Shape shape, Buffer values,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  bool track = false;
  std::vector<std::shared_ptr<TensorImpl>> recorded;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) {
      recorded.push_back(t.impl());
      track = track || t.impl()->requires_grad;
    }
  }
  if (!track) recorded.clear();
  return finish(op, std::move(shape), std::move(values), std::move(recorded),
                track, track ? std::move(backward) : BackwardFn{});
}

}  // namespace detail
}  // namespace tunnelcrack
