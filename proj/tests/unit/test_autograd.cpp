#include <cmath>

#include "doctest.h"
#include "support/grad_cases.hpp"

using namespace tunnelcrack;
namespace o = tunnelcrack::ops;

TEST_CASE("relu gradient at [-1, 2]") {
  auto x = Tensor::from_data({2}, {-1.0, 2.0}, true);
  o::sum(o::relu(x)).backward();
  CHECK(oracle::to_vec(x.grad_tensor()) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("softmax cross-entropy gradient at uniform logits is p - onehot") {
  auto logits = Tensor::from_data({1, 2}, {0.0, 0.0}, true);
  std::vector<int> target{0};
  o::cross_entropy(logits, target).backward();
  CHECK(logits.grad()[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(logits.grad()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("conv weight gradient matches central differences") {
  Rng rng(77);
  auto x = randn({1, 2, 5, 5}, rng);
  auto w = randn({3, 2, 3, 3}, rng);
  auto r = oracle::gradcheck(
      [](const std::vector<Tensor>& in) {
        return o::sum(o::conv2d(in[0], in[1], {}, {}));
      },
      {x, w});
  CHECK(r.max_relative_error <= 1e-4);
}

TEST_CASE("backward error paths") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(o::scale(x, 2.0).backward(), GraphError);
  CHECK_THROWS_AS(Tensor::scalar(1.0).backward(), GraphError);

  auto loss = o::sum(o::mul(x, x));
  loss.backward();
  CHECK(oracle::to_vec(x.grad_tensor()) == std::vector<double>{2.0, 4.0});
  CHECK_THROWS_AS(loss.backward(), GraphError);
}

TEST_CASE("gradients accumulate across passes on leaves and fan-out") {
  auto x = Tensor::from_data({1}, {3.0}, true);
  auto y = o::add(x, x);
  o::sum(o::mul(y, x)).backward();  // 2x^2 -> 4x
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  o::sum(x).backward();
  CHECK(x.grad()[0] == doctest::Approx(13.0));
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("no-grad mode records nothing") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = o::scale(x, 2.0);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("recorded outputs refuse in-place writes") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  auto y = o::scale(x, 2.0);
  CHECK_THROWS_AS(y.mutable_data(), GraphError);
  CHECK_NOTHROW(x.mutable_data());
}

TEST_CASE("every differentiable op passes the finite-difference check") {
  auto cases = oracle::grad_cases();
  for (const auto& c : cases) {
    Rng rng(1000);
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
      auto problem = c.make(rng, trial + 1);
      auto r = oracle::gradcheck(problem.objective, problem.inputs);
      INFO(c.name << " trial " << trial << " rel err " << r.max_relative_error);
      CHECK(r.max_relative_error <= 1e-4);
    }
  }
}
