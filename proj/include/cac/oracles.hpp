// SPDX-License-Identifier: Apache-2.0
//
// Deliberately naive reference implementations. Each one recomputes its
// result with plain index loops and shares no code with the optimized
// operators, so agreement between the two is evidence for both.

#pragma once

#include <cstddef>
#include <span>

#include "cac/ops.hpp"
#include "cac/tensor.hpp"

namespace cac::oracle {

Tensor matmul(const Tensor& a, const Tensor& b);

/// y(n,o,p) = sum_i w(o,i) x(n,i,p) (+ bias(o)).
Tensor pointwise(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

/// Per-pixel, per-tap loop with explicit bounds tests; kernel (s,s,c) or
/// (n,s,s,c).
Tensor depthwise(const Tensor& x, const Tensor& kernel, std::size_t dilation, PaddingMode pad);

/// D(n, i, j) = <Q(:, i), K(:, j)> with Q = Wq x and K = Wk x recomputed
/// pixel by pixel, one (i, j) pair at a time. Returns (n, s*s, c).
Tensor kernel_dot_products(const Tensor& x, const Tensor& wq, const Tensor& wk);

/// Two-pass mean and population variance per channel over the tap axis of a
/// (taps, c) or (n, taps, c) tensor, then gamma * xhat + beta.
Tensor standardize_taps(const Tensor& raw, const Tensor& gamma, const Tensor& beta, double eps);

/// Mean over dilations of 1 / (1 + exp(-depthwise(x, kernels, d))).
Tensor weight_map(const Tensor& x, const Tensor& kernels, std::span<const std::size_t> dilations, PaddingMode pad);

Tensor global_avg_pool(const Tensor& x);

/// Mean of logsumexp(z) - z[label] over pixels.
double cross_entropy(const Tensor& logits, const LabelMap& labels);

}  // namespace cac::oracle
