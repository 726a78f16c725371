#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support/oracles.hpp"
#include "tunnelcrack/ops.hpp"
#include "tunnelcrack/random.hpp"

using namespace tunnelcrack;
namespace o = tunnelcrack::ops;

namespace {

Tensor t4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w,
          std::vector<double> v) {
  return Tensor::from_data({b, c, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("tensor construction validates shape and count") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
  auto t = Tensor::full({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 1.5);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("finite checks flag NaN only when enabled") {
  auto x = Tensor::from_data({2}, {1.0, -1.0});
  auto zero = Tensor::from_data({2}, {0.0, 0.0});
  auto y = o::mul(x, zero);
  CHECK_NOTHROW(o::log_softmax(y, 0));
  set_finite_checks(true);
  CHECK_THROWS_AS(Tensor::from_data({1}, {std::nan("")}), NumericError);
  auto big = Tensor::from_data({1}, {1e308});
  CHECK_THROWS_AS(o::scale(big, 10.0), NumericError);
  set_finite_checks(false);
  CHECK_NOTHROW(o::scale(big, 10.0));
}

TEST_CASE("conv2d examples") {
  SUBCASE("identity 1x1 kernel") {
    Rng rng(3);
    auto x = randn({1, 1, 3, 3}, rng);
    auto w = Tensor::from_data({1, 1, 1, 1}, {1.0});
    auto y = o::conv2d(x, w, {}, {});
    CHECK(y.shape() == x.shape());
    CHECK(oracle::max_abs_diff(oracle::to_vec(x), y.data()) == 0.0);
  }
  SUBCASE("all-ones 3x3 sums to 9") {
    auto y = o::conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0),
                       {}, {});
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 9.0);
  }
  SUBCASE("dilation 2, groups 2 against the loop oracle") {
    Rng rng(11);
    auto x = randn({2, 4, 7, 6}, rng);
    auto w = randn({6, 2, 3, 3}, rng);
    auto b = randn({6}, rng);
    o::ConvParams p;
    p.dilation = {2, 2};
    p.padding = {1, 2};
    p.groups = 2;
    auto y = o::conv2d(x, w, b, p);
    auto bias = oracle::to_vec(b);
    auto ref = oracle::naive_conv2d(oracle::to_vec(x), x.shape(), oracle::to_vec(w),
                                    w.shape(), &bias, p);
    CHECK(oracle::max_abs_diff(ref, y.data()) <= 1e-12);
  }
}

TEST_CASE("conv2d error paths") {
  auto x = Tensor::zeros({1, 3, 4, 4});
  o::ConvParams p;
  p.groups = 2;
  CHECK_THROWS_AS(o::conv2d(x, Tensor::zeros({2, 1, 3, 3}), {}, p), ValueError);
  CHECK_THROWS_AS(o::conv2d(x, Tensor::zeros({2, 2, 3, 3}), {}, {}), ShapeError);
  CHECK_THROWS_AS(o::conv2d(x, Tensor::zeros({2, 3, 5, 5}), {}, {}), ShapeError);
  CHECK_THROWS_AS(o::conv2d(x, Tensor::zeros({2, 3, 1, 1}), Tensor::zeros({3}), {}),
                  ShapeError);
  CHECK(o::conv_output_extent(7, 3, 1, 1, 2) == 4);
  CHECK(o::conv_output_extent(224, 7, 3, 1, 2) == 112);
}

TEST_CASE("conv2d matches the loop oracle over a parameter grid") {
  Rng rng(2024);
  int cases = 0;
  for (int stride : {1, 2})
    for (int pad : {0, 1, 2})
      for (int dil : {1, 2, 3})
        for (int gsel = 0; gsel < 3; ++gsel) {
          const std::int64_t C = 4;
          const std::int64_t groups = gsel == 0 ? 1 : gsel == 1 ? 2 : C;
          const std::int64_t O = groups * 2;
          o::ConvParams p;
          p.stride = {stride, stride};
          p.padding = {pad, pad};
          p.dilation = {dil, dil};
          p.groups = groups;
          auto x = randn({2, C, 9, 8}, rng);
          auto w = randn({O, C / groups, 3, 2}, rng);
          auto y = o::conv2d(x, w, {}, p);
          auto ref = oracle::naive_conv2d(oracle::to_vec(x), x.shape(), oracle::to_vec(w),
                                          w.shape(), nullptr, p);
          CHECK(oracle::max_abs_diff(ref, y.data()) <= 1e-12);
          ++cases;
        }
  CHECK(cases == 54);
}

TEST_CASE("batch_norm inference examples") {
  Rng rng(5);
  auto x = randn({2, 3, 2, 2}, rng);
  auto ones = Tensor::full({3}, 1.0);
  auto zeros = Tensor::zeros({3});
  o::BatchNormOptions opt;
  opt.eps = 0.0;
  auto y = o::batch_norm(x, ones, zeros, zeros.clone(), ones.clone(), opt);
  CHECK(oracle::max_abs_diff(oracle::to_vec(x), y.data()) == 0.0);

  auto y5 = o::batch_norm(x, ones, Tensor::full({3}, 5.0), zeros.clone(), ones.clone(), opt);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(y5.data()[i] == doctest::Approx(x.data()[i] + 5.0).epsilon(1e-15));
  }

  auto single = o::batch_norm(Tensor::from_data({1, 1}, {2.0}), Tensor::scalar(3.0),
                              Tensor::scalar(1.0), Tensor::scalar(1.0), Tensor::scalar(4.0),
                              opt);
  CHECK(single.item() == 2.5);
}

TEST_CASE("batch_norm training uses batch statistics and updates running stats") {
  auto x = Tensor::from_data({4, 1}, {1.0, 2.0, 3.0, 6.0});
  auto rm = Tensor::zeros({1});
  auto rv = Tensor::full({1}, 1.0);
  o::BatchNormOptions opt;
  opt.training = true;
  opt.eps = 0.0;
  auto y = o::batch_norm(x, Tensor::scalar(1.0), Tensor::scalar(0.0), rm, rv, opt);
  // mean 3, biased var 3.5, unbiased 14/3
  CHECK(y.data()[0] == doctest::Approx(-2.0 / std::sqrt(3.5)));
  CHECK(rm.item() == doctest::Approx(0.3));
  CHECK(rv.item() == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));
  double s = 0.0;
  for (double v : y.data()) s += v;
  CHECK(std::abs(s) < 1e-12);
}

TEST_CASE("batch_norm errors") {
  auto x = Tensor::zeros({1, 2, 2, 2});
  auto p2 = Tensor::zeros({2});
  auto p3 = Tensor::zeros({3});
  o::BatchNormOptions opt;
  CHECK_THROWS_AS(o::batch_norm(x, p3, p2, p2, p2, opt), ShapeError);
  opt.eps = -1.0;
  CHECK_THROWS_AS(o::batch_norm(x, p2, p2, p2, p2, opt), ValueError);
}

TEST_CASE("relu") {
  auto y = o::relu(Tensor::from_data({3}, {-1.0, 0.0, 2.0}));
  CHECK(oracle::to_vec(y) == std::vector<double>{0.0, 0.0, 2.0});
  Rng rng(1);
  auto x = randn({50}, rng);
  auto r1 = o::relu(x);
  CHECK(oracle::to_vec(o::relu(r1)) == oracle::to_vec(r1));
  auto pos = rand_uniform({20}, rng, 0.0, 3.0);
  CHECK(oracle::to_vec(o::relu(pos)) == oracle::to_vec(pos));
  CHECK(std::isnan(o::relu(Tensor::from_data({1}, {std::nan("")})).item()));
}

TEST_CASE("max_pool2d") {
  o::PoolParams p;
  auto y = o::max_pool2d(t4(1, 1, 2, 2, {1, 2, 3, 4}), p);
  CHECK(y.item() == 4.0);
  auto c = o::max_pool2d(Tensor::full({1, 2, 4, 4}, 7.0), p);
  for (double v : c.data()) CHECK(v == 7.0);

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = randn({1, 1, 4, 4}, rng);
    auto out = o::max_pool2d(x, p);
    auto ref = oracle::naive_max_pool(oracle::to_vec(x), x.shape(), 2, 2);
    CHECK(oracle::max_abs_diff(ref, out.data()) == 0.0);
  }

  o::PoolParams stem{{3, 3}, {2, 2}, {1, 1}};
  auto s = o::max_pool2d(randn({1, 1, 8, 8}, rng), stem);
  CHECK(s.shape() == Shape{1, 1, 4, 4});
  o::PoolParams bad{{2, 2}, {1, 1}, {2, 2}};
  CHECK_THROWS_AS(o::max_pool2d(Tensor::zeros({1, 1, 4, 4}), bad), ValueError);
  CHECK_THROWS_AS(o::max_pool2d(Tensor::zeros({1, 1, 1, 1}), p), ShapeError);
}

TEST_CASE("global_avg_pool") {
  auto c = o::global_avg_pool(Tensor::full({2, 3, 4, 5}, 2.5));
  CHECK(c.shape() == Shape{2, 3, 1, 1});
  for (double v : c.data()) CHECK(v == 2.5);
  CHECK(o::global_avg_pool(t4(1, 1, 2, 2, {1, 3, 5, 7})).item() == 4.0);
  Rng rng(4);
  auto x = randn({1, 2, 3, 3}, rng);
  auto a = o::global_avg_pool(o::scale(x, 3.0));
  auto b = o::global_avg_pool(x);
  for (int i = 0; i < 2; ++i) CHECK(a.data()[i] == doctest::Approx(3.0 * b.data()[i]));
}

TEST_CASE("avg_pool2d halves extents with floor") {
  auto y = o::avg_pool2d(t4(1, 1, 2, 2, {1, 2, 3, 6}), {});
  CHECK(y.item() == 3.0);
  auto odd = o::avg_pool2d(Tensor::zeros({1, 1, 7, 5}), {});
  CHECK(odd.shape() == Shape{1, 1, 3, 2});
}

TEST_CASE("bilinear_resize") {
  auto one = o::bilinear_resize(Tensor::full({1, 1, 1, 1}, 0.37), 5, 3);
  for (double v : one.data()) CHECK(v == 0.37);
  auto c = o::bilinear_resize(Tensor::full({1, 2, 3, 4}, 0.1), 7, 9);
  for (double v : c.data()) CHECK(v == 0.1);
  auto ramp = o::bilinear_resize(t4(1, 1, 1, 2, {0.0, 2.0}), 1, 4);
  CHECK(oracle::to_vec(ramp) == std::vector<double>{0.0, 0.5, 1.5, 2.0});
  Rng rng(8);
  auto x = randn({2, 3, 5, 6}, rng);
  auto same = o::bilinear_resize(x, 5, 6);
  CHECK(oracle::max_abs_diff(oracle::to_vec(x), same.data()) <= 1e-12);
  CHECK_THROWS_AS(o::bilinear_resize(x, 0, 3), ValueError);
}

TEST_CASE("concat and slice") {
  Rng rng(12);
  auto a = randn({2, 3, 4, 4}, rng);
  auto b = randn({2, 5, 4, 4}, rng);
  auto c = o::concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 8, 4, 4});
  CHECK(oracle::to_vec(o::slice(c, 1, 0, 3)) == oracle::to_vec(a));
  CHECK(oracle::to_vec(o::slice(c, 1, 3, 5)) == oracle::to_vec(b));
  CHECK(oracle::to_vec(o::concat({a}, 1)) == oracle::to_vec(a));
  CHECK_THROWS_AS(o::concat({a, randn({2, 5, 4, 3}, rng)}, 1), ShapeError);
  CHECK_THROWS_AS(o::slice(a, 1, 2, 2), ShapeError);
}

TEST_CASE("linear") {
  Rng rng(13);
  auto x = randn({3, 4}, rng);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  auto id = o::linear(x, Tensor::from_data({4, 4}, eye), Tensor::zeros({4}));
  CHECK(oracle::to_vec(id) == oracle::to_vec(x));
  auto b = randn({2}, rng);
  auto yb = o::linear(x, Tensor::zeros({2, 4}), b);
  for (int r = 0; r < 3; ++r) {
    CHECK(yb.at({r, 0}) == b.data()[0]);
    CHECK(yb.at({r, 1}) == b.data()[1]);
  }
  auto w = randn({2, 4}, rng);
  auto y = o::linear(x, w, b);
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 2; ++k) {
      double dot = b.data()[k];
      for (int f = 0; f < 4; ++f) dot += x.at({r, f}) * w.at({k, f});
      CHECK(y.at({r, k}) == doctest::Approx(dot).epsilon(1e-14));
    }
  CHECK_THROWS_AS(o::linear(x, Tensor::zeros({2, 5}), {}), ShapeError);
}

TEST_CASE("softmax") {
  auto half = o::softmax(Tensor::from_data({1, 2}, {0.0, 0.0}), 1);
  CHECK(half.data()[0] == 0.5);
  CHECK(half.data()[1] == 0.5);
  auto q = o::softmax(Tensor::from_data({1, 2}, {std::log(3.0), 0.0}), 1);
  CHECK(q.data()[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(q.data()[1] == doctest::Approx(0.25).epsilon(1e-15));

  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = randn({3, 4, 2, 2}, rng, 5.0);
    auto s = o::softmax(x, 1);
    auto shifted = o::softmax(o::add(x, Tensor::full(x.shape(), 123.0)), 1);
    CHECK(oracle::max_abs_diff(oracle::to_vec(s), shifted.data()) <= 1e-12);
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          double total = 0.0;
          for (int k = 0; k < 4; ++k) total += s.at({b, k, i, j});
          CHECK(std::abs(total - 1.0) <= 1e-12);
        }
  }
}

TEST_CASE("cross_entropy") {
  std::vector<int> t0{0};
  auto strong = o::cross_entropy(Tensor::from_data({1, 2}, {30.0, -30.0}), t0);
  CHECK(strong.item() < 1e-20);
  std::vector<int> targets{0, 1, 1};
  auto uniform = o::cross_entropy(Tensor::zeros({3, 2}), targets);
  CHECK(uniform.item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Rng rng(15);
  auto x = randn({4, 3}, rng);
  std::vector<int> labels{2, 0, 1, 1};
  const double base = o::cross_entropy(x, labels).item();
  std::vector<int> perm{3, 1, 0, 2};
  std::vector<double> rows;
  std::vector<int> plabels;
  for (int r : perm) {
    for (int k = 0; k < 3; ++k) rows.push_back(x.at({r, k}));
    plabels.push_back(labels[r]);
  }
  auto permuted = o::cross_entropy(Tensor::from_data({4, 3}, rows), plabels);
  CHECK(permuted.item() == doctest::Approx(base).epsilon(1e-14));

  std::vector<int> bad{0, 2};
  CHECK_THROWS_AS(o::cross_entropy(Tensor::zeros({2, 2}), bad), ValueError);
  std::vector<int> short_targets{0};
  CHECK_THROWS_AS(o::cross_entropy(Tensor::zeros({2, 2}), short_targets), ShapeError);

  auto pix = o::cross_entropy(Tensor::zeros({1, 2, 2, 2}), std::vector<int>{0, 1, 1, 0});
  CHECK(pix.item() == doctest::Approx(std::log(2.0)));
}
