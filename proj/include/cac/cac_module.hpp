// SPDX-License-Identifier: Apache-2.0
//
// Context-adaptive convolution (CaC) re-weighting.
//
// Given a feature map X (n, c, h, w) the module
//   1. projects X with two 1x1 convolutions into a query map Q (s*s channels)
//      and a key map K (c channels),
//   2. forms the raw kernel matrix  D_raw = Q_flat * K_flat^T  (s*s x c), a sum
//      of per-position outer products over all h*w positions,
//   3. standardizes each channel of D_raw over its s*s taps and applies a
//      learned affine, giving the depth-wise kernel stack D (s, s, c),
//   4. correlates X depth-wise with D at every configured dilation, squashes
//      each result with a sigmoid and averages them into the weight map W,
//   5. returns X * W elementwise.
//
// Because D depends on X only through sums over positions, the kernels are
// invariant to any permutation of spatial positions while the resulting
// weights still vary from position to position.

#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "cac/ops.hpp"
#include "cac/rng.hpp"
#include "cac/tensor.hpp"

namespace cac {

/// How a batch of inputs is turned into kernels.
enum class KernelBatchMode {
  per_item,    // every item gets kernels predicted from its own context
  batch_mean,  // raw kernels averaged over the batch, one stack shared by all
};

std::string_view to_string(KernelBatchMode mode);
KernelBatchMode kernel_batch_mode_from_string(std::string_view name);

struct CaCConfig {
  std::size_t channels = 0;
  std::size_t kernel_size = 3;
  std::vector<std::size_t> dilations{1, 2, 3};
  std::size_t heads = 2;
  PaddingMode padding = PaddingMode::zero;
  bool use_projection_bias = false;
  KernelBatchMode batch_mode = KernelBatchMode::per_item;
  double norm_eps = 1e-5;

  std::size_t taps() const { return kernel_size * kernel_size; }
  /// Throws ConfigError naming every violated constraint.
  void validate() const;
  friend bool operator==(const CaCConfig&, const CaCConfig&) = default;
};

struct CaCParams {
  Tensor query_weight;  // (s*s, c)
  Tensor key_weight;    // (c, c)
  Tensor query_bias;    // (s*s), empty when biases are off
  Tensor key_bias;      // (c), empty when biases are off
  Tensor norm_gamma;    // (c)
  Tensor norm_beta;     // (c)

  static CaCParams init(const CaCConfig& cfg, CounterRng& rng);

  /// Query and key projection weights (and biases when enabled). Equals
  /// c^2 + s^2 c with biases off.
  std::size_t projection_parameter_count() const;
  /// Projections plus the 2c normalization affine.
  std::size_t parameter_count() const;
  std::vector<ParamRef> parameters(std::string_view prefix);
};

/// Intermediate tensors of kernel prediction.
struct KernelPredictionTrace {
  Tensor query;       // (n, s*s, h, w)
  Tensor key;         // (n, c, h, w)
  Tensor raw;         // (n_k, s*s, c); n_k = n (per item) or 1 (batch mean)
  Tensor normalized;  // standardized taps before the affine, (n_k, s*s, c)
  Tensor inv_std;     // (n_k, c)
};

struct PredictedKernels {
  Tensor kernels;  // (n_k, s, s, c)
  std::size_t kernel_size = 0;

  std::size_t items() const { return kernels.dim(0); }
  /// Kernel stack of item i as an (s, s, c) tensor.
  Tensor item(std::size_t i) const;
};

/// Raw kernel matrix per item: raw(n, i, j) = sum_p query(n, i, p) key(n, j, p).
Tensor raw_kernel_product(const Tensor& query, const Tensor& key);

PredictedKernels predict_cac_kernels(const Tensor& x, const CaCParams& params, const CaCConfig& cfg,
                                     KernelPredictionTrace* trace = nullptr);

struct KernelNormCache {
  Tensor normalized;
  Tensor inv_std;
};

/// Per item and channel: subtract the mean over the s*s taps, divide by
/// sqrt(var + eps) (population variance), then gamma * . + beta. Accepts
/// (s, s, c), (s*s, c) or a leading item axis on either.
Tensor normalize_kernels(const Tensor& raw, const Tensor& gamma, const Tensor& beta, double eps,
                         KernelNormCache* cache = nullptr);

struct KernelNormGrads {
  Tensor draw;
  Tensor dgamma;
  Tensor dbeta;
};
KernelNormGrads normalize_kernels_backward(const KernelNormCache& cache, const Tensor& gamma, const Tensor& grad_out);

struct WeightMapCache {
  std::vector<Tensor> branches;  // sigmoid output per dilation
};

/// W = mean over dilations d of sigmoid(depthwise(x, kernels, d)); every entry
/// lies strictly inside (0, 1).
Tensor generate_weight_map(const Tensor& x, const Tensor& kernels, std::span<const std::size_t> dilations,
                           PaddingMode pad, WeightMapCache* cache = nullptr);

struct WeightMapGrads {
  Tensor dx;
  Tensor dkernels;
};
WeightMapGrads generate_weight_map_backward(const Tensor& x, const Tensor& kernels,
                                            std::span<const std::size_t> dilations, PaddingMode pad,
                                            const WeightMapCache& cache, const Tensor& grad_weights);

/// x * weights, elementwise.
Tensor reweight(const Tensor& x, const Tensor& weights);

struct ReweightGrads {
  Tensor dx;
  Tensor dweights;
};
ReweightGrads reweight_backward(const Tensor& x, const Tensor& weights, const Tensor& grad_out);

struct CaCCache {
  Tensor input;
  KernelPredictionTrace trace;
  PredictedKernels kernels;
  WeightMapCache weight_cache;
  Tensor weights;
};

Tensor cac_forward(const Tensor& x, const CaCParams& params, const CaCConfig& cfg, CaCCache* cache = nullptr);

/// Accumulates parameter gradients into `params` and returns d loss / d x.
Tensor cac_backward(const CaCCache& cache, CaCParams& params, const CaCConfig& cfg, const Tensor& grad_out);

/// Per-channel spatial mean replicated to every position.
Tensor global_pool_branch(const Tensor& x);
Tensor global_pool_branch_backward(const Shape& input_shape, const Tensor& grad_out);

}  // namespace cac
