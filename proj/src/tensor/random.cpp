#include "tunnelcrack/random.hpp"

#include <cmath>
#include <numbers>

namespace tunnelcrack {

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw ValueError("Rng::below requires a positive bound");
  // Rejection keeps the mapping unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  for (;;) {
    const std::uint64_t v = engine_();
    if (v < limit) return v % bound;
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = rng.normal() * stddev;
  return Tensor::from_data(std::move(shape), std::move(values), requires_grad);
}

Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                    bool requires_grad) {
  std::vector<double> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(values), requires_grad);
}

}  // namespace tunnelcrack
