// SPDX-License-Identifier: Apache-2.0
//
// Alternative re-weighting modules that slot into the segmentation head in
// place of the CaC module:
//
//   fixed  learned depth-wise kernels, identical for every input
//   gap    kernels predicted by a dense layer from the globally pooled vector
//   dwfc   kernels from position-specific depth-wise weighted sums; bound to
//          one (h, w)
//   se     squeeze-and-excitation: one channel weighting vector per image,
//          shared by all positions
//
// The first three reuse the CaC weight generation (multi-dilation sigmoid
// average) and differ only in where the kernels come from.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cac/cac_module.hpp"
#include "cac/ops.hpp"
#include "cac/rng.hpp"
#include "cac/tensor.hpp"

namespace cac {

// -- fixed ----------------------------------------------------------------------

struct FixedKernelParams {
  Tensor kernels;  // (s, s, c)

  static FixedKernelParams init(std::size_t channels, std::size_t kernel_size, CounterRng& rng);
  std::size_t parameter_count() const { return kernels.size(); }
  std::vector<ParamRef> parameters(std::string_view prefix);
};

struct KernelReweightCache {
  Tensor input;
  Tensor kernels;  // the kernels actually used, (n_k, s, s, c) or (s, s, c)
  WeightMapCache weight_cache;
  Tensor weights;
};

Tensor fixed_kernel_forward(const Tensor& x, const FixedKernelParams& params, std::span<const std::size_t> dilations,
                            PaddingMode pad = PaddingMode::zero, KernelReweightCache* cache = nullptr);
Tensor fixed_kernel_backward(const KernelReweightCache& cache, FixedKernelParams& params,
                             std::span<const std::size_t> dilations, PaddingMode pad, const Tensor& grad_out);

// -- GAP-predicted ------------------------------------------------------------------

struct GapKernelParams {
  Tensor projection;  // (c, s*s*c): pooled vector -> flattened (s, s, c) kernels
  std::size_t kernel_size = 0;

  static GapKernelParams init(std::size_t channels, std::size_t kernel_size, CounterRng& rng);
  std::size_t parameter_count() const { return projection.size(); }
  std::vector<ParamRef> parameters(std::string_view prefix);
};

/// (n, s, s, c) kernels from the pooled features.
Tensor gap_predict_kernels(const Tensor& x, const GapKernelParams& params);

struct GapKernelCache {
  KernelReweightCache reweight;
  Tensor pooled;  // (n, c)
};

Tensor gap_kernel_forward(const Tensor& x, const GapKernelParams& params, std::span<const std::size_t> dilations,
                          PaddingMode pad = PaddingMode::zero, GapKernelCache* cache = nullptr);
Tensor gap_kernel_backward(const GapKernelCache& cache, GapKernelParams& params, std::span<const std::size_t> dilations,
                           PaddingMode pad, const Tensor& grad_out);

// -- depth-wise FC -------------------------------------------------------------------

struct DwFcKernelParams {
  Tensor weights;  // (h*w, s*s, c): weight of position p for tap t of channel j
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel_size = 0;

  static DwFcKernelParams init(std::size_t channels, std::size_t kernel_size, std::size_t height, std::size_t width,
                               CounterRng& rng);
  std::size_t parameter_count() const { return weights.size(); }
  std::vector<ParamRef> parameters(std::string_view prefix);
};

/// kernels(n, t, j) = sum_p weights(p, t, j) x(n, j, p), as (n, s, s, c).
/// Throws ConfigError when x's spatial extents differ from the construction.
Tensor dwfc_predict_kernels(const Tensor& x, const DwFcKernelParams& params);

Tensor dwfc_kernel_forward(const Tensor& x, const DwFcKernelParams& params, std::span<const std::size_t> dilations,
                           PaddingMode pad = PaddingMode::zero, KernelReweightCache* cache = nullptr);
Tensor dwfc_kernel_backward(const KernelReweightCache& cache, DwFcKernelParams& params,
                            std::span<const std::size_t> dilations, PaddingMode pad, const Tensor& grad_out);

// -- squeeze-and-excitation -------------------------------------------------------

struct SEParams {
  Tensor reduce;  // (c / r, c)
  Tensor expand;  // (c, c / r)
  std::size_t reduction = 4;

  static SEParams init(std::size_t channels, std::size_t reduction, CounterRng& rng);
  std::size_t parameter_count() const { return reduce.size() + expand.size(); }
  std::vector<ParamRef> parameters(std::string_view prefix);
};

struct SECache {
  Tensor input;
  Tensor pooled;     // (n, c)
  Tensor hidden;     // (n, c/r), before relu
  Tensor gates;      // (n, c), after sigmoid
};

/// Channel gates v = sigmoid(expand * relu(reduce * gap(x))), shape (n, c).
Tensor se_gates(const Tensor& x, const SEParams& params, SECache* cache = nullptr);
/// Gates replicated over positions, (n, c, h, w).
Tensor se_weight_map(const Tensor& x, const SEParams& params);
Tensor se_forward(const Tensor& x, const SEParams& params, SECache* cache = nullptr);
Tensor se_backward(const SECache& cache, SEParams& params, const Tensor& grad_out);

// -- closed-form parameter counts ------------------------------------------------

namespace param_count {

std::uint64_t cac_projection(std::uint64_t c, std::uint64_t s);  // c^2 + s^2 c
std::uint64_t cac_total(std::uint64_t c, std::uint64_t s);       // + 2c affine
std::uint64_t fixed(std::uint64_t c, std::uint64_t s);           // s^2 c
std::uint64_t gap(std::uint64_t c, std::uint64_t s);             // s^2 c^2
std::uint64_t dwfc(std::uint64_t c, std::uint64_t s, std::uint64_t h, std::uint64_t w);  // h w s^2 c
std::uint64_t full_fc(std::uint64_t c, std::uint64_t s);         // s^2 c^3, never materialized
std::uint64_t se(std::uint64_t c, std::uint64_t r);              // 2 c^2 / r

}  // namespace param_count

}  // namespace cac
