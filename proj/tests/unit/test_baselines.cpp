// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "cac/baselines.hpp"
#include "cac/errors.hpp"
#include "cac/init.hpp"
#include "cac/oracles.hpp"

using namespace cac;

namespace {

Tensor random(Shape shape, std::uint64_t seed, double bound = 1.0) {
  CounterRng rng(derive_key(seed, 31));
  return uniform_tensor(std::move(shape), bound, rng);
}

const std::vector<std::size_t> kDilations{1, 2, 3};

void check_halved(const Tensor& y, const Tensor& x) {
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i] / 2.0);
}

}  // namespace

TEST_CASE("zero kernels halve the input for every kernel-based baseline") {
  const Tensor x = random({2, 4, 5, 6}, 1);
  CounterRng rng(1);

  FixedKernelParams fixed = FixedKernelParams::init(4, 3, rng);
  for (auto& v : fixed.kernels.data()) v = 0.0;
  check_halved(fixed_kernel_forward(x, fixed, kDilations), x);

  GapKernelParams gap = GapKernelParams::init(4, 3, rng);
  for (auto& v : gap.projection.data()) v = 0.0;
  check_halved(gap_kernel_forward(x, gap, kDilations), x);

  DwFcKernelParams dwfc = DwFcKernelParams::init(4, 3, 5, 6, rng);
  for (auto& v : dwfc.weights.data()) v = 0.0;
  check_halved(dwfc_kernel_forward(x, dwfc, kDilations), x);

  SEParams se = SEParams::init(4, 2, rng);
  for (auto& v : se.reduce.data()) v = 0.0;
  for (auto& v : se.expand.data()) v = 0.0;
  check_halved(se_forward(x, se), x);
}

TEST_CASE("dwfc: weights on one position copy that position's features into the kernels") {
  const std::size_t c = 3, h = 4, w = 5, t = 9, p = 2 * w + 3;
  CounterRng rng(2);
  DwFcKernelParams params = DwFcKernelParams::init(c, 3, h, w, rng);
  for (auto& v : params.weights.data()) v = 0.0;
  for (std::size_t tap = 0; tap < t; ++tap)
    for (std::size_t j = 0; j < c; ++j) params.weights[(p * t + tap) * c + j] = static_cast<double>(tap + 1);
  const Tensor x = random({2, c, h, w}, 3);
  const Tensor k = dwfc_predict_kernels(x, params);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t tap = 0; tap < t; ++tap)
      for (std::size_t j = 0; j < c; ++j)
        CHECK(k[(n * t + tap) * c + j] == static_cast<double>(tap + 1) * x.at(n, j, 2, 3));
}

TEST_CASE("dwfc is bound to its construction extents") {
  CounterRng rng(4);
  const DwFcKernelParams params = DwFcKernelParams::init(3, 3, 4, 5, rng);
  CHECK_THROWS_AS(dwfc_kernel_forward(random({1, 3, 5, 4}, 5), params, kDilations), ConfigError);
}

TEST_CASE("SE requires the reduction to divide the channels") {
  CounterRng rng(6);
  CHECK_THROWS_AS(SEParams::init(6, 4, rng), ConfigError);
}

TEST_CASE("SE weights are spatially constant; fixed kernels are input independent") {
  CounterRng rng(7);
  const SEParams se = SEParams::init(8, 4, rng);
  const Tensor x = random({2, 8, 5, 5}, 8);
  const Tensor w = se_weight_map(x, se);
  for (std::size_t nc = 0; nc < 16; ++nc)
    for (std::size_t q = 1; q < 25; ++q) CHECK(w[nc * 25 + q] == w[nc * 25]);

  const FixedKernelParams fixed = FixedKernelParams::init(8, 3, rng);
  KernelReweightCache a, b;
  fixed_kernel_forward(x, fixed, kDilations, PaddingMode::zero, &a);
  fixed_kernel_forward(random({2, 8, 5, 5}, 9), fixed, kDilations, PaddingMode::zero, &b);
  CHECK(max_abs_diff(a.kernels, b.kernels) == 0.0);
}

TEST_CASE("GAP kernels depend on the input only through its pooled vector") {
  CounterRng rng(10);
  const GapKernelParams gap = GapKernelParams::init(4, 3, rng);
  const Tensor x = random({1, 4, 4, 4}, 11);
  // Reverse the spatial order: same pooled vector, same kernels.
  Tensor xr(x.shape());
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t p = 0; p < 16; ++p) xr[j * 16 + p] = x[j * 16 + 15 - p];
  CHECK(max_abs_diff(gap_predict_kernels(x, gap), gap_predict_kernels(xr, gap)) < 1e-15);
}

TEST_CASE("closed-form parameter counts match materialized tensors") {
  CHECK(param_count::fixed(8, 3) == 72);
  CHECK(param_count::gap(512, 3) == 2359296);
  CHECK(param_count::cac_projection(512, 3) == 266752);
  CHECK(param_count::full_fc(64, 3) == 9ULL * 64 * 64 * 64);
  CHECK(param_count::se(64, 4) == 2048);
  for (std::size_t c : {8u, 64u}) {
    CounterRng rng(c);
    CHECK(FixedKernelParams::init(c, 3, rng).parameter_count() == param_count::fixed(c, 3));
    CHECK(GapKernelParams::init(c, 3, rng).parameter_count() == param_count::gap(c, 3));
    CHECK(DwFcKernelParams::init(c, 3, 16, 16, rng).parameter_count() == param_count::dwfc(c, 3, 16, 16));
    CHECK(SEParams::init(c, 4, rng).parameter_count() == param_count::se(c, 4));
  }
  CHECK(param_count::fixed(64, 3) < param_count::cac_projection(64, 3));
  CHECK(param_count::cac_projection(64, 3) < param_count::gap(64, 3));
  CHECK(param_count::gap(64, 3) < param_count::dwfc(64, 3, 16, 16));
}
