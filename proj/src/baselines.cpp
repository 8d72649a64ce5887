// SPDX-License-Identifier: Apache-2.0
#include "cac/baselines.hpp"

#include <string>

#include "cac/errors.hpp"
#include "cac/init.hpp"

namespace cac {
namespace {

Tensor reweight_with_kernels(const Tensor& x, const Tensor& kernels, std::span<const std::size_t> dilations,
                             PaddingMode pad, KernelReweightCache* cache) {
  WeightMapCache wcache;
  Tensor weights = generate_weight_map(x, kernels, dilations, pad, cache ? &wcache : nullptr);
  Tensor out = reweight(x, weights);
  if (cache) {
    cache->input = x;
    cache->kernels = kernels;
    cache->weight_cache = std::move(wcache);
    cache->weights = std::move(weights);
  }
  return out;
}

// Returns {dx through the weight map and reweighting, dkernels}.
WeightMapGrads reweight_with_kernels_backward(const KernelReweightCache& cache, std::span<const std::size_t> dilations,
                                              PaddingMode pad, const Tensor& grad_out) {
  auto rw = reweight_backward(cache.input, cache.weights, grad_out);
  auto wm = generate_weight_map_backward(cache.input, cache.kernels, dilations, pad, cache.weight_cache, rw.dweights);
  ops::add_inplace(wm.dx, rw.dx);
  return wm;
}

}  // namespace

// -- fixed ----------------------------------------------------------------------

FixedKernelParams FixedKernelParams::init(std::size_t channels, std::size_t kernel_size, CounterRng& rng) {
  return {fan_in_uniform({kernel_size, kernel_size, channels}, kernel_size * kernel_size, rng)};
}

std::vector<ParamRef> FixedKernelParams::parameters(std::string_view prefix) {
  return {{std::string(prefix) + "kernels", &kernels}};
}

Tensor fixed_kernel_forward(const Tensor& x, const FixedKernelParams& params, std::span<const std::size_t> dilations,
                            PaddingMode pad, KernelReweightCache* cache) {
  return reweight_with_kernels(x, params.kernels, dilations, pad, cache);
}

Tensor fixed_kernel_backward(const KernelReweightCache& cache, FixedKernelParams& params,
                             std::span<const std::size_t> dilations, PaddingMode pad, const Tensor& grad_out) {
  auto g = reweight_with_kernels_backward(cache, dilations, pad, grad_out);
  params.kernels.accumulate_grad(g.dkernels);
  return std::move(g.dx);
}

// -- GAP ----------------------------------------------------------------------------

GapKernelParams GapKernelParams::init(std::size_t channels, std::size_t kernel_size, CounterRng& rng) {
  return {fan_in_uniform({channels, kernel_size * kernel_size * channels}, channels, rng), kernel_size};
}

std::vector<ParamRef> GapKernelParams::parameters(std::string_view prefix) {
  return {{std::string(prefix) + "projection", &projection}};
}

Tensor gap_predict_kernels(const Tensor& x, const GapKernelParams& params) {
  const Tensor pooled = ops::global_avg_pool(x);
  if (params.projection.dim(0) != x.dim(1)) {
    throw ConfigError("gap kernels: projection " + shape_to_string(params.projection.shape()) +
                      " does not match input channels " + std::to_string(x.dim(1)));
  }
  const std::size_t s = params.kernel_size;
  return ops::matmul(pooled, params.projection).reshaped({x.dim(0), s, s, x.dim(1)});
}

Tensor gap_kernel_forward(const Tensor& x, const GapKernelParams& params, std::span<const std::size_t> dilations,
                          PaddingMode pad, GapKernelCache* cache) {
  Tensor kernels = gap_predict_kernels(x, params);
  if (cache) cache->pooled = ops::global_avg_pool(x);
  return reweight_with_kernels(x, kernels, dilations, pad, cache ? &cache->reweight : nullptr);
}

Tensor gap_kernel_backward(const GapKernelCache& cache, GapKernelParams& params, std::span<const std::size_t> dilations,
                           PaddingMode pad, const Tensor& grad_out) {
  auto g = reweight_with_kernels_backward(cache.reweight, dilations, pad, grad_out);
  const std::size_t nb = cache.pooled.dim(0);
  const Tensor dflat = g.dkernels.reshaped({nb, params.projection.dim(1)});
  auto mm = ops::matmul_backward(cache.pooled, params.projection, dflat);
  params.projection.accumulate_grad(mm.db);
  ops::add_inplace(g.dx, ops::global_avg_pool_backward(cache.reweight.input.shape(), mm.da));
  return std::move(g.dx);
}

// -- DwFC ---------------------------------------------------------------------------

DwFcKernelParams DwFcKernelParams::init(std::size_t channels, std::size_t kernel_size, std::size_t height,
                                        std::size_t width, CounterRng& rng) {
  if (height == 0 || width == 0) throw ConfigError("dwfc: spatial extents must be positive");
  return {fan_in_uniform({height * width, kernel_size * kernel_size, channels}, height * width, rng), height, width,
          kernel_size};
}

std::vector<ParamRef> DwFcKernelParams::parameters(std::string_view prefix) {
  return {{std::string(prefix) + "weights", &weights}};
}

namespace {

void check_dwfc_extent(const Tensor& x, const DwFcKernelParams& params) {
  require_rank(x, 4, "dwfc input");
  if (x.dim(2) != params.height || x.dim(3) != params.width) {
    throw ConfigError("dwfc: built for " + std::to_string(params.height) + "x" + std::to_string(params.width) +
                      " features, got " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)));
  }
  if (x.dim(1) != params.weights.dim(2)) {
    throw ConfigError("dwfc: weights " + shape_to_string(params.weights.shape()) + " do not match input channels " +
                      std::to_string(x.dim(1)));
  }
}

}  // namespace

Tensor dwfc_predict_kernels(const Tensor& x, const DwFcKernelParams& params) {
  check_dwfc_extent(x, params);
  const std::size_t nb = x.dim(0), c = x.dim(1), hw = params.height * params.width;
  const std::size_t s = params.kernel_size, taps = s * s;
  Tensor kernels({nb, s, s, c});
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t t = 0; t < taps; ++t)
        for (std::size_t j = 0; j < c; ++j)
          kernels[(n * taps + t) * c + j] += params.weights[(p * taps + t) * c + j] * x[(n * c + j) * hw + p];
  return kernels;
}

Tensor dwfc_kernel_forward(const Tensor& x, const DwFcKernelParams& params, std::span<const std::size_t> dilations,
                           PaddingMode pad, KernelReweightCache* cache) {
  return reweight_with_kernels(x, dwfc_predict_kernels(x, params), dilations, pad, cache);
}

Tensor dwfc_kernel_backward(const KernelReweightCache& cache, DwFcKernelParams& params,
                            std::span<const std::size_t> dilations, PaddingMode pad, const Tensor& grad_out) {
  auto g = reweight_with_kernels_backward(cache, dilations, pad, grad_out);
  const Tensor& x = cache.input;
  const std::size_t nb = x.dim(0), c = x.dim(1), hw = params.height * params.width;
  const std::size_t taps = params.kernel_size * params.kernel_size;
  Tensor dweights(params.weights.shape());
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t t = 0; t < taps; ++t)
        for (std::size_t j = 0; j < c; ++j) {
          const double dk = g.dkernels[(n * taps + t) * c + j];
          dweights[(p * taps + t) * c + j] += dk * x[(n * c + j) * hw + p];
          g.dx[(n * c + j) * hw + p] += dk * params.weights[(p * taps + t) * c + j];
        }
  params.weights.accumulate_grad(dweights);
  return std::move(g.dx);
}

// -- SE -------------------------------------------------------------------------

SEParams SEParams::init(std::size_t channels, std::size_t reduction, CounterRng& rng) {
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("se: channels " + std::to_string(channels) + " not divisible by reduction " +
                      std::to_string(reduction));
  }
  const std::size_t hidden = channels / reduction;
  SEParams p;
  p.reduce = fan_in_uniform({hidden, channels}, channels, rng, 2.0);
  p.expand = fan_in_uniform({channels, hidden}, hidden, rng);
  p.reduction = reduction;
  return p;
}

std::vector<ParamRef> SEParams::parameters(std::string_view prefix) {
  const std::string p(prefix);
  return {{p + "reduce", &reduce}, {p + "expand", &expand}};
}

Tensor se_gates(const Tensor& x, const SEParams& params, SECache* cache) {
  require_rank(x, 4, "se input");
  if (params.reduce.dim(1) != x.dim(1) || params.expand.dim(0) != x.dim(1)) {
    throw ConfigError("se: params do not match input channels " + std::to_string(x.dim(1)));
  }
  Tensor pooled = ops::global_avg_pool(x);
  Tensor hidden = ops::matmul(pooled, ops::transpose(params.reduce));
  Tensor gates = ops::sigmoid(ops::matmul(ops::relu(hidden), ops::transpose(params.expand)));
  if (cache) {
    cache->input = x;
    cache->pooled = std::move(pooled);
    cache->hidden = std::move(hidden);
    cache->gates = gates;
  }
  return gates;
}

Tensor se_weight_map(const Tensor& x, const SEParams& params) {
  return ops::broadcast_spatial(se_gates(x, params), x.dim(2), x.dim(3));
}

Tensor se_forward(const Tensor& x, const SEParams& params, SECache* cache) {
  const Tensor gates = se_gates(x, params, cache);
  return reweight(x, ops::broadcast_spatial(gates, x.dim(2), x.dim(3)));
}

Tensor se_backward(const SECache& cache, SEParams& params, const Tensor& grad_out) {
  const Tensor& x = cache.input;
  const Tensor weights = ops::broadcast_spatial(cache.gates, x.dim(2), x.dim(3));
  auto rw = reweight_backward(x, weights, grad_out);
  const Tensor dgates = ops::broadcast_spatial_backward(rw.dweights);
  const Tensor dz = ops::sigmoid_backward(cache.gates, dgates);
  const Tensor activated = ops::relu(cache.hidden);
  // z = relu(hidden) * expand^T
  auto mm2 = ops::matmul_backward(activated, ops::transpose(params.expand), dz);
  params.expand.accumulate_grad(ops::transpose(mm2.db));
  const Tensor dhidden = ops::relu_backward(cache.hidden, mm2.da);
  auto mm1 = ops::matmul_backward(cache.pooled, ops::transpose(params.reduce), dhidden);
  params.reduce.accumulate_grad(ops::transpose(mm1.db));
  ops::add_inplace(rw.dx, ops::global_avg_pool_backward(x.shape(), mm1.da));
  return std::move(rw.dx);
}

// -- counts -------------------------------------------------------------------------

namespace param_count {

std::uint64_t cac_projection(std::uint64_t c, std::uint64_t s) { return c * c + s * s * c; }
std::uint64_t cac_total(std::uint64_t c, std::uint64_t s) { return cac_projection(c, s) + 2 * c; }
std::uint64_t fixed(std::uint64_t c, std::uint64_t s) { return s * s * c; }
std::uint64_t gap(std::uint64_t c, std::uint64_t s) { return s * s * c * c; }
std::uint64_t dwfc(std::uint64_t c, std::uint64_t s, std::uint64_t h, std::uint64_t w) { return h * w * s * s * c; }
std::uint64_t full_fc(std::uint64_t c, std::uint64_t s) { return s * s * c * c * c; }
std::uint64_t se(std::uint64_t c, std::uint64_t r) {
  if (r == 0 || c % r != 0) throw ConfigError("se: channels not divisible by reduction");
  return 2 * c * (c / r);
}

}  // namespace param_count

}  // namespace cac
