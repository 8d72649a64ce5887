// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "cac/errors.hpp"
#include "cac/grad_check.hpp"
#include "cac/init.hpp"
#include "cac/ops.hpp"
#include "cac/oracles.hpp"
#include "cac/rng.hpp"

using namespace cac;

namespace {

Tensor random(Shape shape, std::uint64_t seed, double bound = 1.0) {
  CounterRng rng(derive_key(seed, 7));
  return uniform_tensor(std::move(shape), bound, rng);
}

Tensor filled(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = v;
  return t;
}

}  // namespace

TEST_CASE("matmul identity and annihilator") {
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const Tensor b = random({3, 2}, 1);
  CHECK(max_abs_diff(ops::matmul(eye, b), b) == 0.0);
  const Tensor zero({2, 2});
  const Tensor r = random({2, 2}, 2);
  const Tensor y = ops::matmul(zero, r);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul rejects mismatched shapes and names both") {
  const Tensor a({2, 3}), b({4, 2});
  try {
    ops::matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4, 2)") != std::string::npos);
  }
}

TEST_CASE("matmul agrees with the naive oracle") {
  const Tensor a = random({5, 7}, 3), b = random({7, 4}, 4);
  CHECK(max_abs_diff(ops::matmul(a, b), oracle::matmul(a, b)) < 1e-12);
}

TEST_CASE("pointwise conv: identity weight and scalar scaling") {
  const Tensor x = random({2, 3, 4, 5}, 5);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  CHECK(max_abs_diff(ops::conv2d_pointwise(x, eye), x) == 0.0);

  const Tensor x1 = random({2, 1, 3, 3}, 6);
  const Tensor two({1, 1}, {2.0});
  const Tensor y = ops::conv2d_pointwise(x1, two);
  for (std::size_t i = 0; i < x1.size(); ++i) CHECK(y[i] == 2.0 * x1[i]);

  CHECK_THROWS_AS(ops::conv2d_pointwise(x, Tensor({2, 4})), DimensionError);
}

TEST_CASE("depthwise: centred delta kernel reproduces the input at every dilation") {
  const Tensor x = random({2, 3, 7, 6}, 8);
  for (std::size_t s : {3u, 5u}) {
    Tensor k({s, s, 3});
    for (std::size_t j = 0; j < 3; ++j) k[((s / 2) * s + s / 2) * 3 + j] = 1.0;
    for (std::size_t d : {1u, 2u, 3u})
      for (PaddingMode pad : {PaddingMode::zero, PaddingMode::circular})
        CHECK(max_abs_diff(ops::conv2d_depthwise_dilated(x, k, d, pad), x) == 0.0);
  }
}

TEST_CASE("depthwise: constant field with all-ones kernel and circular padding gives 9 kappa") {
  Tensor x({1, 2, 4, 5});
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t p = 0; p < 20; ++p) x[j * 20 + p] = j == 0 ? 0.5 : -1.25;
  const Tensor k = filled({3, 3, 2}, 1.0);
  for (std::size_t d : {1u, 2u, 7u}) {
    const Tensor y = ops::conv2d_depthwise_dilated(x, k, d, PaddingMode::circular);
    for (std::size_t p = 0; p < 20; ++p) {
      CHECK(y[p] == doctest::Approx(4.5).epsilon(1e-15));
      CHECK(y[20 + p] == doctest::Approx(-11.25).epsilon(1e-15));
    }
  }
}

TEST_CASE("depthwise: even kernel is a configuration error; oversized receptive field reads zeros") {
  const Tensor x = random({1, 2, 3, 3}, 9);
  CHECK_THROWS_AS(ops::conv2d_depthwise_dilated(x, Tensor({2, 2, 2}), 1, PaddingMode::zero), ConfigError);
  // Dilation 5 on a 3x3 map: only the centre tap lands inside.
  Tensor k = filled({3, 3, 2}, 1.0);
  const Tensor y = ops::conv2d_depthwise_dilated(x, k, 5, PaddingMode::zero);
  CHECK(max_abs_diff(y, x) == 0.0);
}

TEST_CASE("depthwise matches the naive oracle on random instances") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CounterRng rng(derive_key(seed, 11));
    const std::size_t h = 1 + rng.below(9), w = 1 + rng.below(9), s = rng.below(2) ? 5 : 3, d = 1 + rng.below(3);
    const Tensor x = uniform_tensor({2, 3, h, w}, 1.0, rng);
    const Tensor k = uniform_tensor({s, s, 3}, 1.0, rng);
    for (PaddingMode pad : {PaddingMode::zero, PaddingMode::circular})
      CHECK(max_abs_diff(ops::conv2d_depthwise_dilated(x, k, d, pad), oracle::depthwise(x, k, d, pad)) < 1e-12);
  }
}

TEST_CASE("global average pool of constant and 1x1 maps") {
  const Tensor c = filled({2, 3, 4, 4}, 0.375);
  const Tensor g = ops::global_avg_pool(c);
  for (double v : g.data()) CHECK(v == 0.375);
  const Tensor one = random({2, 3, 1, 1}, 10);
  CHECK(max_abs_diff(ops::global_avg_pool(one).reshaped({2, 3, 1, 1}), one) == 0.0);
}

TEST_CASE("bilinear upsample: identity factor, constant preservation, invalid factor") {
  const Tensor x = random({1, 2, 3, 4}, 12);
  CHECK(max_abs_diff(ops::bilinear_upsample(x, 1), x) == 0.0);
  const Tensor c = filled({1, 2, 3, 4}, -0.7);
  const Tensor up = ops::bilinear_upsample(c, 2);
  CHECK(up.shape() == Shape{1, 2, 6, 8});
  for (double v : up.data()) CHECK(v == doctest::Approx(-0.7).epsilon(1e-15));
  CHECK_THROWS_AS(ops::bilinear_upsample(x, 0), ConfigError);
}

TEST_CASE("sigmoid values, limits and monotonicity") {
  CHECK(ops::sigmoid(0.0) == 0.5);
  CHECK(ops::sigmoid(40.0) > 1.0 - 1e-15);
  CHECK(ops::sigmoid(-40.0) < 1e-15);
  CHECK(ops::sigmoid(-1000.0) >= 0.0);
  CHECK(std::isfinite(ops::sigmoid(-1000.0)));
  double prev = ops::sigmoid(-10.0);
  for (double v = -9.75; v <= 10.0; v += 0.25) {
    const double cur = ops::sigmoid(v);
    CHECK(cur > prev);
    prev = cur;
  }
}

TEST_CASE("softmax cross-entropy: uniform logits, saturation, bad labels, ignore index") {
  const Tensor uniform({2, 5, 3, 3});
  LabelMap labels(2, 3, 3, 4);
  CHECK(ops::softmax_cross_entropy(uniform, labels).loss == doctest::Approx(std::log(5.0)).epsilon(1e-14));

  Tensor sharp({1, 3, 2, 2});
  LabelMap l1(1, 2, 2, 1);
  for (std::size_t p = 0; p < 4; ++p) sharp[4 + p] = 60.0;
  CHECK(ops::softmax_cross_entropy(sharp, l1).loss < 1e-20);

  LabelMap bad(1, 2, 2, 0);
  bad.at(0, 1, 0) = 3;
  try {
    ops::softmax_cross_entropy(sharp, bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("n=0, y=1, x=0") != std::string::npos);
  }

  LabelMap part(1, 2, 2, 1);
  part.at(0, 0, 0) = 255;
  const auto r = ops::softmax_cross_entropy(sharp, part, 255);
  CHECK(r.counted == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(r.grad.at(0, k, 0, 0) == 0.0);
}

TEST_CASE("cross-entropy matches the log-sum-exp oracle") {
  CounterRng rng(derive_key(13, 0));
  const Tensor logits = uniform_tensor({2, 4, 3, 5}, 6.0, rng);
  LabelMap labels(2, 3, 5);
  for (auto& v : labels.values) v = static_cast<std::int32_t>(rng.below(4));
  CHECK(ops::softmax_cross_entropy(logits, labels).loss ==
        doctest::Approx(oracle::cross_entropy(logits, labels)).epsilon(1e-13));
}

TEST_CASE("grad_check: quadratic, composed layer and corrupted gradient") {
  const std::vector<double> p{0.3, -1.2, 2.5, 0.0, 4.0};
  const ScalarObjective quad = [](std::span<const double> v, std::span<double> g) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      s += v[i] * v[i];
      if (!g.empty()) g[i] = 2.0 * v[i];
    }
    return s;
  };
  const auto q = grad_check(quad, p, 1e-5, 1e-4);
  CHECK(q.passed);
  CHECK(q.max_rel_error < 1e-9);

  // sum(r * sigmoid(W x)) with respect to W.
  const Tensor x = random({1, 3, 4, 4}, 14);
  const Tensor r = random({1, 2, 4, 4}, 15);
  const Tensor w0 = random({2, 3}, 16);
  const ScalarObjective layer = [&](std::span<const double> v, std::span<double> g) {
    const Tensor w({2, 3}, std::vector<double>(v.begin(), v.end()));
    const Tensor y = ops::sigmoid(ops::conv2d_pointwise(x, w));
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    if (!g.empty()) {
      const Tensor dz = ops::sigmoid_backward(y, r);
      const auto d = ops::conv2d_pointwise_backward(x, w, false, dz);
      std::copy(d.dweight.data().begin(), d.dweight.data().end(), g.begin());
    }
    return s;
  };
  const auto lr = grad_check(layer, w0.data(), 1e-5, 1e-4);
  CHECK(lr.max_rel_error < 1e-6);

  const ScalarObjective corrupted = [&](std::span<const double> v, std::span<double> g) {
    const double f = quad(v, g);
    if (!g.empty()) g[2] += 0.1;
    return f;
  };
  const auto c = grad_check(corrupted, p, 1e-5, 1e-4);
  CHECK_FALSE(c.passed);
  CHECK(c.worst_index == 2);
  CHECK(c.max_rel_error > 1e-4);
}

TEST_CASE("grad_check rejects non-finite losses and bad eps") {
  const std::vector<double> p{1.0};
  const ScalarObjective nan = [](std::span<const double>, std::span<double>) {
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS(grad_check(nan, p, 1e-5, 1e-4), NumericError);
  const ScalarObjective ok = [](std::span<const double> v, std::span<double> g) {
    if (!g.empty()) g[0] = 1.0;
    return v[0];
  };
  CHECK_THROWS_AS(grad_check(ok, p, 0.1, 1e-4), ConfigError);
}

TEST_CASE("same-padded ops preserve spatial extents on a shape sweep") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    CounterRng rng(derive_key(seed, 17));
    const std::size_t n = 1 + rng.below(3), c = 1 + rng.below(5), h = 1 + rng.below(8), w = 1 + rng.below(8);
    const Tensor x = uniform_tensor({n, c, h, w}, 1.0, rng);
    const Tensor k = uniform_tensor({3, 3, c}, 1.0, rng);
    CHECK(ops::conv2d_depthwise_dilated(x, k, 1 + rng.below(3), PaddingMode::zero).shape() == x.shape());
    const std::size_t cout = 1 + rng.below(6);
    CHECK(ops::conv2d_pointwise(x, Tensor({cout, c})).shape() == Shape{n, cout, h, w});
    CHECK(ops::sigmoid(x).shape() == x.shape());
    CHECK(ops::global_avg_pool(x).shape() == Shape{n, c});
  }
}

TEST_CASE("counter rng streams are reproducible and distinct") {
  CounterRng a(derive_key(42, 1)), b(derive_key(42, 1)), c(derive_key(42, 2));
  bool differs = false;
  for (int i = 0; i < 16; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs = differs || va != c.next_u64();
  }
  CHECK(differs);
  CounterRng u(7);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}
