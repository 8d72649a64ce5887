// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "cac/cac_module.hpp"
#include "cac/errors.hpp"
#include "cac/head.hpp"
#include "cac/init.hpp"
#include "cac/oracles.hpp"

using namespace cac;

namespace {

CaCConfig config(std::size_t c, std::size_t s = 3) {
  CaCConfig cfg;
  cfg.channels = c;
  cfg.kernel_size = s;
  return cfg;
}

CaCParams params(const CaCConfig& cfg, std::uint64_t seed) {
  CounterRng rng(derive_key(seed, 21));
  CaCParams p = CaCParams::init(cfg, rng);
  for (auto& v : p.norm_gamma.data()) v = rng.uniform(0.5, 1.5);
  for (auto& v : p.norm_beta.data()) v = rng.uniform(-0.5, 0.5);
  return p;
}

Tensor random(Shape shape, std::uint64_t seed, double bound = 1.0) {
  CounterRng rng(derive_key(seed, 22));
  return uniform_tensor(std::move(shape), bound, rng);
}

Tensor constant_map(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  const Tensor v = random({c}, seed);
  Tensor x({1, c, h, w});
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t p = 0; p < h * w; ++p) x[j * h * w + p] = v[j];
  return x;
}

}  // namespace

TEST_CASE("config validation lists every violation") {
  CaCConfig cfg;
  cfg.channels = 0;
  cfg.kernel_size = 4;
  cfg.dilations = {};
  cfg.heads = 0;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("cac.channels") != std::string::npos);
    CHECK(msg.find("cac.s") != std::string::npos);
    CHECK(msg.find("cac.dilations") != std::string::npos);
    CHECK(msg.find("cac.heads") != std::string::npos);
  }
}

TEST_CASE("kernel prediction matches the per-pair dot-product oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CounterRng rng(derive_key(seed, 23));
    const CaCConfig cfg = config(1 + rng.below(16), rng.below(2) ? 5 : 3);
    const CaCParams p = params(cfg, seed);
    const Tensor x = uniform_tensor({2, cfg.channels, 1 + rng.below(8), 1 + rng.below(8)}, 1.0, rng);
    KernelPredictionTrace trace;
    const PredictedKernels k = predict_cac_kernels(x, p, cfg, &trace);
    const Tensor expect = oracle::kernel_dot_products(x, p.query_weight, p.key_weight);
    CHECK(max_rel_diff(trace.raw.reshaped(expect.shape()), expect) < 1e-10);
    CHECK(k.kernels.shape() == Shape{2, cfg.kernel_size, cfg.kernel_size, cfg.channels});
    CHECK(k.items() == 2);
  }
}

TEST_CASE("constant input gives the rank-one kernel matrix n * q k^T") {
  const CaCConfig cfg = config(5);
  const CaCParams p = params(cfg, 3);
  const Tensor x = constant_map(5, 3, 4, 4);
  KernelPredictionTrace trace;
  predict_cac_kernels(x, p, cfg, &trace);
  const Tensor raw = trace.raw.reshaped({9, 5});
  // Every 2x2 minor of a rank-one matrix vanishes.
  double worst = 0.0;
  for (std::size_t a = 0; a < 9; ++a)
    for (std::size_t b = a + 1; b < 9; ++b)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = i + 1; j < 5; ++j) {
          const double minor = raw.at(a, i) * raw.at(b, j) - raw.at(a, j) * raw.at(b, i);
          worst = std::max(worst, std::abs(minor));
        }
  double scale = 0.0;
  for (double v : raw.data()) scale = std::max(scale, v * v);
  CHECK(worst <= 1e-12 * scale);
}

TEST_CASE("kernel prediction rejects a channel mismatch") {
  const CaCConfig cfg = config(4);
  const CaCParams p = params(cfg, 1);
  CHECK_THROWS_AS(predict_cac_kernels(random({1, 3, 4, 4}, 1), p, cfg), ConfigError);
}

TEST_CASE("normalize_kernels: fixed point, constant channel, oracle") {
  const Tensor gamma({2}, {1.0, 1.0}), beta({2}, {0.0, 0.0});
  // Channel 0 is already zero-mean with unit population variance over 9 taps.
  Tensor raw({3, 3, 2});
  const double z[9] = {-1.5, -1.0, -0.5, 0.0, 0.0, 0.0, 0.5, 1.0, 1.5};
  double ss = 0.0;
  for (double v : z) ss += v * v;
  const double unit = std::sqrt(9.0 / ss);
  for (std::size_t t = 0; t < 9; ++t) {
    raw[t * 2] = z[t] * unit;
    raw[t * 2 + 1] = 0.8;
  }
  const Tensor betas({2}, {0.0, -0.3});
  const Tensor out = normalize_kernels(raw, gamma, betas, 1e-5);
  for (std::size_t t = 0; t < 9; ++t) {
    if (raw[t * 2] != 0.0) CHECK(std::abs(out[t * 2] - raw[t * 2]) / std::abs(raw[t * 2]) < 1e-4);
    CHECK(out[t * 2 + 1] == doctest::Approx(-0.3).epsilon(1e-12));
  }

  const Tensor r = random({2, 5, 5, 3}, 5, 4.0), g = random({3}, 6), b = random({3}, 7);
  const Tensor expect = oracle::standardize_taps(r.reshaped({2, 25, 3}), g, b, 1e-5);
  CHECK(max_abs_diff(normalize_kernels(r, g, b, 1e-5).reshaped({2, 25, 3}), expect) < 1e-12);
}

TEST_CASE("normalized kernels are invariant to a positive rescaling of the input") {
  const CaCConfig cfg = config(4);
  const CaCParams p = params(cfg, 8);
  const Tensor x = random({1, 4, 6, 6}, 9);
  Tensor x3 = x;
  for (auto& v : x3.data()) v *= 3.0;
  const auto a = predict_cac_kernels(x, p, cfg), b = predict_cac_kernels(x3, p, cfg);
  CHECK(max_abs_diff(a.kernels, b.kernels) < 1e-6);
}

TEST_CASE("weight map: zero kernel, singleton dilation, open unit interval") {
  const Tensor x = random({2, 3, 5, 5}, 10);
  const std::vector<std::size_t> dil{1, 2, 3};
  const Tensor w0 = generate_weight_map(x, Tensor({2, 3, 3, 3}), dil, PaddingMode::zero);
  for (double v : w0.data()) CHECK(v == 0.5);

  const Tensor k = random({2, 3, 3, 3}, 11);
  const std::vector<std::size_t> one{1};
  const Tensor w1 = generate_weight_map(x, k, one, PaddingMode::zero);
  CHECK(max_abs_diff(w1, ops::sigmoid(ops::conv2d_depthwise_dilated(x, k, 1, PaddingMode::zero))) == 0.0);

  const Tensor big = random({2, 3, 3, 3}, 12, 8.0);
  const Tensor wb = generate_weight_map(x, big, dil, PaddingMode::circular);
  for (double v : wb.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(max_abs_diff(wb, oracle::weight_map(x, big, dil, PaddingMode::circular)) < 1e-12);
}

TEST_CASE("reweight: uniform damping and shape mismatch") {
  const Tensor x = random({1, 2, 3, 3}, 13);
  Tensor half(x.shape());
  for (auto& v : half.data()) v = 0.5;
  const Tensor y = reweight(x, half);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i] / 2.0);
  CHECK_THROWS_AS(reweight(x, Tensor({1, 2, 3, 4})), DimensionError);
}

TEST_CASE("cac_forward contracts every nonzero entry and preserves shape") {
  const CaCConfig cfg = config(6);
  const CaCParams p = params(cfg, 14);
  const Tensor x = random({2, 6, 7, 5}, 15, 3.0);
  const Tensor y = cac_forward(x, p, cfg);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != 0.0) CHECK(std::abs(y[i]) < std::abs(x[i]));
}

TEST_CASE("constant input with circular padding stays spatially constant") {
  CaCConfig cfg = config(4);
  cfg.padding = PaddingMode::circular;
  const CaCParams p = params(cfg, 16);
  const Tensor x = constant_map(4, 5, 6, 17);
  const Tensor y = cac_forward(x, p, cfg);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t q = 1; q < 30; ++q) CHECK(y[j * 30 + q] == doctest::Approx(y[j * 30]).epsilon(1e-14));
}

TEST_CASE("cyclic shift equivariance with circular padding") {
  CaCConfig cfg = config(5, 5);
  cfg.padding = PaddingMode::circular;
  const CaCParams p = params(cfg, 18);
  const Tensor x = random({1, 5, 6, 7}, 19);
  auto roll = [](const Tensor& t, std::size_t dy, std::size_t dx) {
    Tensor r(t.shape());
    const std::size_t h = t.dim(2), w = t.dim(3);
    for (std::size_t j = 0; j < t.dim(1); ++j)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t q = 0; q < w; ++q) r.at(0, j, (y + dy) % h, (q + dx) % w) = t.at(0, j, y, q);
    return r;
  };
  const Tensor expect = roll(cac_forward(x, p, cfg), 2, 5);
  CHECK(max_rel_diff(cac_forward(roll(x, 2, 5), p, cfg), expect) < 1e-9);
}

TEST_CASE("per-item kernels differ across a batch; batch_mean shares one stack") {
  CaCConfig cfg = config(4);
  const CaCParams p = params(cfg, 20);
  const Tensor x = random({2, 4, 5, 5}, 21);
  const auto per = predict_cac_kernels(x, p, cfg);
  CHECK(max_abs_diff(per.item(0), per.item(1)) > 1e-3);
  // Per-item prediction equals predicting each item alone.
  const auto lone = predict_cac_kernels(ops::slice_batch(x, 1), p, cfg);
  CHECK(max_abs_diff(per.item(1), lone.item(0)) == 0.0);

  cfg.batch_mode = KernelBatchMode::batch_mean;
  const auto shared = predict_cac_kernels(x, p, cfg);
  CHECK(shared.items() == 1);
}

TEST_CASE("parameter counts of the module") {
  for (std::size_t c : {8u, 64u, 512u}) {
    CounterRng rng(derive_key(c, 24));
    const CaCParams p = CaCParams::init(config(c), rng);
    CHECK(p.projection_parameter_count() == c * c + 9 * c);
    CHECK(p.parameter_count() == c * c + 9 * c + 2 * c);
  }
  CounterRng rng(1);
  CHECK(CaCParams::init(config(512), rng).projection_parameter_count() == 266752);
}

TEST_CASE("head: duplicated modules give identical channel blocks and the classifier sees (H+1)c inputs") {
  HeadConfig cfg;
  cfg.cac = config(4);
  cfg.cac.heads = 3;
  CounterRng rng(derive_key(25, 0));
  SegHead head = SegHead::init(cfg, rng);
  CHECK(head.classifier_weight.shape() == Shape{3, 16});
  head.modules[2] = head.modules[0];
  const Tensor x = random({2, 4, 5, 5}, 26);
  HeadCache cache;
  const Tensor logits = head_forward(x, head, cfg, &cache);
  CHECK(logits.shape() == Shape{2, 3, 5, 5});
  const std::vector<std::size_t> sizes{4, 4, 4, 4};
  const auto blocks = ops::split_channels(cache.features, sizes);
  CHECK(max_abs_diff(blocks[0], blocks[2]) == 0.0);
  CHECK(max_abs_diff(blocks[0], blocks[1]) > 0.0);
  CHECK(max_abs_diff(blocks[3], global_pool_branch(x)) == 0.0);

  head.classifier_weight = Tensor({3, 12});
  CHECK_THROWS_AS(head_forward(x, head, cfg), ConfigError);
}

TEST_CASE("global pool branch of a constant map is that constant") {
  const Tensor x = constant_map(3, 4, 4, 27);
  CHECK(max_abs_diff(global_pool_branch(x), x) < 1e-15);
}
