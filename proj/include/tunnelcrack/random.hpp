#pragma once

#include <cstdint>
#include <random>

#include "tunnelcrack/tensor.hpp"

namespace tunnelcrack {

// Seeded generator with distribution mappings fixed in code, so the same seed
// yields the same stream with any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 42) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  // Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
             bool requires_grad = false);
Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                    bool requires_grad = false);

}  // namespace tunnelcrack
