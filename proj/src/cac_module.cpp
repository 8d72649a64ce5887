// SPDX-License-Identifier: Apache-2.0
#include "cac/cac_module.hpp"

#include <cmath>
#include <string>

#include "cac/errors.hpp"
#include "cac/init.hpp"

namespace cac {

std::string_view to_string(KernelBatchMode mode) {
  return mode == KernelBatchMode::per_item ? "per_item" : "batch_mean";
}

KernelBatchMode kernel_batch_mode_from_string(std::string_view name) {
  if (name == "per_item") return KernelBatchMode::per_item;
  if (name == "batch_mean") return KernelBatchMode::batch_mean;
  throw ConfigError("unknown kernel batch mode '" + std::string(name) + "' (expected per_item or batch_mean)");
}

void CaCConfig::validate() const {
  std::string problems;
  auto fail = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
  if (channels == 0) fail("cac.channels must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0) fail("cac.s must be odd, got " + std::to_string(kernel_size));
  if (dilations.empty()) fail("cac.dilations must be nonempty");
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    if (dilations[i] == 0) fail("cac.dilations entries must be positive");
    if (i > 0 && dilations[i] <= dilations[i - 1]) fail("cac.dilations must be strictly increasing");
  }
  if (heads == 0) fail("cac.heads must be >= 1");
  if (!(norm_eps > 0.0)) fail("cac.norm_eps must be > 0");
  if (!problems.empty()) throw ConfigError("invalid CaC configuration: " + problems);
}

// -- params -------------------------------------------------------------------

CaCParams CaCParams::init(const CaCConfig& cfg, CounterRng& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels, t = cfg.taps();
  CaCParams p;
  p.query_weight = fan_in_uniform({t, c}, c, rng);
  p.key_weight = fan_in_uniform({c, c}, c, rng);
  if (cfg.use_projection_bias) {
    p.query_bias = Tensor({t});
    p.key_bias = Tensor({c});
  }
  p.norm_gamma = Tensor({c}, 1.0);
  p.norm_beta = Tensor({c}, 0.0);
  return p;
}

std::size_t CaCParams::projection_parameter_count() const {
  return query_weight.size() + key_weight.size() + query_bias.size() + key_bias.size();
}

std::size_t CaCParams::parameter_count() const {
  return projection_parameter_count() + norm_gamma.size() + norm_beta.size();
}

std::vector<ParamRef> CaCParams::parameters(std::string_view prefix) {
  const std::string p(prefix);
  std::vector<ParamRef> out{{p + "query_weight", &query_weight}, {p + "key_weight", &key_weight}};
  if (!query_bias.empty()) out.push_back({p + "query_bias", &query_bias});
  if (!key_bias.empty()) out.push_back({p + "key_bias", &key_bias});
  out.push_back({p + "norm_gamma", &norm_gamma});
  out.push_back({p + "norm_beta", &norm_beta});
  return out;
}

Tensor PredictedKernels::item(std::size_t i) const {
  const std::size_t s = kernel_size, c = kernels.dim(3);
  return ops::slice_batch(kernels, i).reshaped({s, s, c});
}

// -- kernel prediction ---------------------------------------------------------

Tensor raw_kernel_product(const Tensor& query, const Tensor& key) {
  require_rank(query, 4, "raw_kernel_product query");
  require_rank(key, 4, "raw_kernel_product key");
  if (query.dim(0) != key.dim(0) || query.dim(2) != key.dim(2) || query.dim(3) != key.dim(3)) {
    throw DimensionError("raw_kernel_product: query " + shape_to_string(query.shape()) + " and key " +
                         shape_to_string(key.shape()) + " disagree");
  }
  const std::size_t nb = query.dim(0), taps = query.dim(1), c = key.dim(1), hw = query.dim(2) * query.dim(3);
  const auto s = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(taps))));
  if (s * s != taps) throw DimensionError("raw_kernel_product: query channel count is not a square");
  Tensor raw({nb, s, s, c});
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t i = 0; i < taps; ++i) {
      const double* q = &query[(n * taps + i) * hw];
      for (std::size_t j = 0; j < c; ++j) {
        const double* k = &key[(n * c + j) * hw];
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) acc += q[p] * k[p];
        raw[(n * taps + i) * c + j] = acc;
      }
    }
  }
  return raw;
}

namespace {

const Tensor* optional_bias(const Tensor& b) { return b.empty() ? nullptr : &b; }

Tensor batch_mean(const Tensor& items) {
  const std::size_t nb = items.dim(0), per = items.size() / nb;
  Shape shape = items.shape();
  shape[0] = 1;
  Tensor out(shape);
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t i = 0; i < per; ++i) out[i] += items[n * per + i];
  const double inv = 1.0 / static_cast<double>(nb);
  for (auto& v : out.data()) v *= inv;
  return out;
}

}  // namespace

PredictedKernels predict_cac_kernels(const Tensor& x, const CaCParams& params, const CaCConfig& cfg,
                                     KernelPredictionTrace* trace) {
  require_rank(x, 4, "predict_cac_kernels input");
  if (x.dim(1) != cfg.channels || params.key_weight.dim(1) != cfg.channels ||
      params.query_weight.dim(0) != cfg.taps()) {
    throw ConfigError("predict_cac_kernels: input " + shape_to_string(x.shape()) + " / params do not match c=" +
                      std::to_string(cfg.channels) + ", s=" + std::to_string(cfg.kernel_size));
  }
  Tensor query = ops::conv2d_pointwise(x, params.query_weight, optional_bias(params.query_bias));
  Tensor key = ops::conv2d_pointwise(x, params.key_weight, optional_bias(params.key_bias));
  Tensor raw = raw_kernel_product(query, key);
  if (cfg.batch_mode == KernelBatchMode::batch_mean && raw.dim(0) > 1) raw = batch_mean(raw);

  KernelNormCache norm;
  PredictedKernels out{normalize_kernels(raw, params.norm_gamma, params.norm_beta, cfg.norm_eps, &norm),
                       cfg.kernel_size};
  if (trace) {
    trace->query = std::move(query);
    trace->key = std::move(key);
    trace->raw = std::move(raw);
    trace->normalized = std::move(norm.normalized);
    trace->inv_std = std::move(norm.inv_std);
  }
  return out;
}

// -- normalization ---------------------------------------------------------------

namespace {

struct KernelGeometry {
  std::size_t items, taps, channels;
};

KernelGeometry kernel_geometry(const Tensor& raw) {
  switch (raw.rank()) {
    case 2:
      return {1, raw.dim(0), raw.dim(1)};
    case 3:
      return {1, raw.dim(0) * raw.dim(1), raw.dim(2)};
    case 4:
      return {raw.dim(0), raw.dim(1) * raw.dim(2), raw.dim(3)};
    default:
      throw DimensionError("normalize_kernels: unsupported kernel shape " + shape_to_string(raw.shape()));
  }
}

}  // namespace

Tensor normalize_kernels(const Tensor& raw, const Tensor& gamma, const Tensor& beta, double eps,
                         KernelNormCache* cache) {
  const auto g = kernel_geometry(raw);
  if (gamma.size() != g.channels || beta.size() != g.channels) {
    throw DimensionError("normalize_kernels: affine extents do not match " + std::to_string(g.channels) +
                         " channels");
  }
  if (!(eps > 0.0)) throw ConfigError("normalize_kernels: eps must be > 0");
  Tensor out(raw.shape());
  Tensor xhat(raw.shape());
  Tensor inv_std({g.items, g.channels});
  const double inv_taps = 1.0 / static_cast<double>(g.taps);
  for (std::size_t k = 0; k < g.items; ++k) {
    for (std::size_t j = 0; j < g.channels; ++j) {
      auto idx = [&](std::size_t t) { return (k * g.taps + t) * g.channels + j; };
      double mean = 0.0;
      for (std::size_t t = 0; t < g.taps; ++t) mean += raw[idx(t)];
      mean *= inv_taps;
      double var = 0.0;
      for (std::size_t t = 0; t < g.taps; ++t) {
        const double d = raw[idx(t)] - mean;
        var += d * d;
      }
      var *= inv_taps;
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[k * g.channels + j] = inv;
      for (std::size_t t = 0; t < g.taps; ++t) {
        const double h = (raw[idx(t)] - mean) * inv;
        xhat[idx(t)] = h;
        out[idx(t)] = gamma[j] * h + beta[j];
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

KernelNormGrads normalize_kernels_backward(const KernelNormCache& cache, const Tensor& gamma, const Tensor& grad_out) {
  require_same_shape(cache.normalized, grad_out, "normalize_kernels_backward");
  const auto g = kernel_geometry(grad_out);
  KernelNormGrads r{Tensor(grad_out.shape()), Tensor({g.channels}), Tensor({g.channels})};
  const double inv_taps = 1.0 / static_cast<double>(g.taps);
  for (std::size_t k = 0; k < g.items; ++k) {
    for (std::size_t j = 0; j < g.channels; ++j) {
      auto idx = [&](std::size_t t) { return (k * g.taps + t) * g.channels + j; };
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (std::size_t t = 0; t < g.taps; ++t) {
        const double dy = grad_out[idx(t)];
        const double h = cache.normalized[idx(t)];
        r.dgamma[j] += dy * h;
        r.dbeta[j] += dy;
        mean_dxhat += dy * gamma[j];
        mean_dxhat_xhat += dy * gamma[j] * h;
      }
      mean_dxhat *= inv_taps;
      mean_dxhat_xhat *= inv_taps;
      const double inv = cache.inv_std[k * g.channels + j];
      for (std::size_t t = 0; t < g.taps; ++t) {
        const double dxhat = grad_out[idx(t)] * gamma[j];
        r.draw[idx(t)] = inv * (dxhat - mean_dxhat - cache.normalized[idx(t)] * mean_dxhat_xhat);
      }
    }
  }
  return r;
}

// -- weight map ----------------------------------------------------------------

Tensor generate_weight_map(const Tensor& x, const Tensor& kernels, std::span<const std::size_t> dilations,
                           PaddingMode pad, WeightMapCache* cache) {
  if (dilations.empty()) throw ConfigError("generate_weight_map: dilation set is empty");
  Tensor w(x.shape());
  if (cache) cache->branches.clear();
  for (auto d : dilations) {
    Tensor branch = ops::sigmoid(ops::conv2d_depthwise_dilated(x, kernels, d, pad));
    ops::add_inplace(w, branch);
    if (cache) cache->branches.push_back(std::move(branch));
  }
  const double inv = 1.0 / static_cast<double>(dilations.size());
  for (auto& v : w.data()) v *= inv;
  return w;
}

WeightMapGrads generate_weight_map_backward(const Tensor& x, const Tensor& kernels,
                                            std::span<const std::size_t> dilations, PaddingMode pad,
                                            const WeightMapCache& cache, const Tensor& grad_weights) {
  if (cache.branches.size() != dilations.size()) {
    throw DimensionError("generate_weight_map_backward: cache holds " + std::to_string(cache.branches.size()) +
                         " branches for " + std::to_string(dilations.size()) + " dilations");
  }
  WeightMapGrads g{Tensor(x.shape()), Tensor(kernels.shape())};
  const Tensor upstream = ops::scale(grad_weights, 1.0 / static_cast<double>(dilations.size()));
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    const Tensor dz = ops::sigmoid_backward(cache.branches[i], upstream);
    auto conv = ops::conv2d_depthwise_dilated_backward(x, kernels, dilations[i], pad, dz);
    ops::add_inplace(g.dx, conv.dx);
    ops::add_inplace(g.dkernels, conv.dkernel);
  }
  return g;
}

Tensor reweight(const Tensor& x, const Tensor& weights) {
  require_same_shape(x, weights, "reweight");
  return ops::multiply(x, weights);
}

ReweightGrads reweight_backward(const Tensor& x, const Tensor& weights, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "reweight_backward");
  return {ops::multiply(grad_out, weights), ops::multiply(grad_out, x)};
}

// -- full module --------------------------------------------------------------------

Tensor cac_forward(const Tensor& x, const CaCParams& params, const CaCConfig& cfg, CaCCache* cache) {
  KernelPredictionTrace trace;
  PredictedKernels kernels = predict_cac_kernels(x, params, cfg, cache ? &trace : nullptr);
  WeightMapCache wcache;
  Tensor weights = generate_weight_map(x, kernels.kernels, cfg.dilations, cfg.padding, cache ? &wcache : nullptr);
  Tensor out = reweight(x, weights);
  if (cache) {
    cache->input = x;
    cache->trace = std::move(trace);
    cache->kernels = std::move(kernels);
    cache->weight_cache = std::move(wcache);
    cache->weights = std::move(weights);
  }
  return out;
}

Tensor cac_backward(const CaCCache& cache, CaCParams& params, const CaCConfig& cfg, const Tensor& grad_out) {
  const Tensor& x = cache.input;
  const auto& tr = cache.trace;
  auto rw = reweight_backward(x, cache.weights, grad_out);
  auto wm = generate_weight_map_backward(x, cache.kernels.kernels, cfg.dilations, cfg.padding, cache.weight_cache,
                                         rw.dweights);
  auto norm = normalize_kernels_backward({tr.normalized, tr.inv_std}, params.norm_gamma, wm.dkernels);
  params.norm_gamma.accumulate_grad(norm.dgamma);
  params.norm_beta.accumulate_grad(norm.dbeta);

  const std::size_t nb = x.dim(0), c = cfg.channels, taps = cfg.taps(), hw = x.dim(2) * x.dim(3);
  const bool shared = norm.draw.dim(0) == 1 && nb > 1;
  const double share = shared ? 1.0 / static_cast<double>(nb) : 1.0;

  Tensor dquery(tr.query.shape());
  Tensor dkey(tr.key.shape());
  for (std::size_t n = 0; n < nb; ++n) {
    const std::size_t kn = shared ? 0 : n;
    for (std::size_t i = 0; i < taps; ++i) {
      const double* q = &tr.query[(n * taps + i) * hw];
      double* dq = &dquery[(n * taps + i) * hw];
      for (std::size_t j = 0; j < c; ++j) {
        const double g = norm.draw[(kn * taps + i) * c + j] * share;
        const double* k = &tr.key[(n * c + j) * hw];
        double* dk = &dkey[(n * c + j) * hw];
        for (std::size_t p = 0; p < hw; ++p) {
          dq[p] += g * k[p];
          dk[p] += g * q[p];
        }
      }
    }
  }

  auto qg = ops::conv2d_pointwise_backward(x, params.query_weight, !params.query_bias.empty(), dquery);
  auto kg = ops::conv2d_pointwise_backward(x, params.key_weight, !params.key_bias.empty(), dkey);
  params.query_weight.accumulate_grad(qg.dweight);
  params.key_weight.accumulate_grad(kg.dweight);
  if (!params.query_bias.empty()) params.query_bias.accumulate_grad(qg.dbias);
  if (!params.key_bias.empty()) params.key_bias.accumulate_grad(kg.dbias);

  Tensor dx = std::move(rw.dx);
  ops::add_inplace(dx, wm.dx);
  ops::add_inplace(dx, qg.dx);
  ops::add_inplace(dx, kg.dx);
  return dx;
}

Tensor global_pool_branch(const Tensor& x) {
  require_rank(x, 4, "global_pool_branch");
  return ops::broadcast_spatial(ops::global_avg_pool(x), x.dim(2), x.dim(3));
}

Tensor global_pool_branch_backward(const Shape& input_shape, const Tensor& grad_out) {
  return ops::global_avg_pool_backward(input_shape, ops::broadcast_spatial_backward(grad_out));
}

}  // namespace cac
