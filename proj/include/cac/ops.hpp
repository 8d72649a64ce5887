// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives used by the re-weighting heads. Every forward op
// has a hand-written backward that returns the gradients of its inputs given
// the upstream gradient of its output. Accumulation order is fixed
// (row-major), so results are bitwise reproducible on one thread.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cac/tensor.hpp"

namespace cac {

enum class PaddingMode { zero, circular };

std::string_view to_string(PaddingMode mode);
PaddingMode padding_from_string(std::string_view name);

/// Integer label map, (batch, height, width).
struct LabelMap {
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> values;

  LabelMap() = default;
  LabelMap(std::size_t n, std::size_t h, std::size_t w, std::int32_t fill = 0)
      : batch(n), height(h), width(w), values(n * h * w, fill) {}

  std::int32_t& at(std::size_t n, std::size_t y, std::size_t x) { return values[(n * height + y) * width + x]; }
  std::int32_t at(std::size_t n, std::size_t y, std::size_t x) const { return values[(n * height + y) * width + x]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

namespace ops {

// -- matmul -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

struct MatmulGrads {
  Tensor da;
  Tensor db;
};
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out);

Tensor transpose(const Tensor& m);

// -- 1x1 convolution ----------------------------------------------------------

/// y(n,o,p) = sum_i w(o,i) x(n,i,p) + bias(o). weight is (c_out, c_in).
Tensor conv2d_pointwise(const Tensor& x, const Tensor& weight, const Tensor* bias = nullptr);

struct PointwiseGrads {
  Tensor dx;
  Tensor dweight;
  Tensor dbias;  // empty when no bias was used
};
PointwiseGrads conv2d_pointwise_backward(const Tensor& x, const Tensor& weight, bool has_bias, const Tensor& grad_out);

// -- depth-wise dilated correlation --------------------------------------------

/// Channel j of the output is the same-padded correlation of channel j of x
/// with kernel(:, :, j) at the given dilation. Kernel layout is (s, s, c) when
/// shared across the batch or (n_k, s, s, c) with n_k in {1, batch} for
/// per-item kernels.
Tensor conv2d_depthwise_dilated(const Tensor& x, const Tensor& kernel, std::size_t dilation,
                                PaddingMode pad = PaddingMode::zero);

struct DepthwiseGrads {
  Tensor dx;
  Tensor dkernel;  // same shape as the kernel argument
};
DepthwiseGrads conv2d_depthwise_dilated_backward(const Tensor& x, const Tensor& kernel, std::size_t dilation,
                                                 PaddingMode pad, const Tensor& grad_out);

// -- pooling / broadcast -------------------------------------------------------

/// (n, c, h, w) -> (n, c) spatial mean.
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

/// (n, c) -> (n, c, h, w) by replication.
Tensor broadcast_spatial(const Tensor& v, std::size_t height, std::size_t width);
/// Adjoint of broadcast_spatial: sums over positions.
Tensor broadcast_spatial_backward(const Tensor& grad_out);

/// Non-overlapping factor x factor mean pooling; h and w must be divisible.
Tensor avg_pool_downsample(const Tensor& x, std::size_t factor);
Tensor avg_pool_downsample_backward(const Shape& input_shape, std::size_t factor, const Tensor& grad_out);

// -- resampling ----------------------------------------------------------------

/// Bilinear upsampling with half-pixel centres (align_corners = false) and
/// edge clamping.
Tensor bilinear_upsample(const Tensor& x, std::size_t factor);
Tensor bilinear_upsample_backward(const Shape& input_shape, std::size_t factor, const Tensor& grad_out);

Tensor flip_horizontal(const Tensor& x);
LabelMap flip_horizontal(const LabelMap& labels);

// -- elementwise ------------------------------------------------------------

double sigmoid(double v);
Tensor sigmoid(const Tensor& x);
/// Gradient through y = sigmoid(x), given y.
Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

Tensor multiply(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
void add_inplace(Tensor& acc, const Tensor& delta);

// -- channel bookkeeping ---------------------------------------------------------

Tensor concat_channels(std::span<const Tensor> parts);
/// Inverse of concat_channels for gradients; sizes are per-part channel counts.
std::vector<Tensor> split_channels(const Tensor& x, std::span<const std::size_t> sizes);

/// Stacks rank-k tensors of identical shape into a rank-(k+1) batch.
Tensor stack(std::span<const Tensor> items);
/// Slice item n out of the leading axis.
Tensor slice_batch(const Tensor& x, std::size_t n);

// -- loss -----------------------------------------------------------------

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits
  std::size_t counted = 0;
};

/// Mean over non-ignored pixels of -log softmax(logits)[label].
LossResult softmax_cross_entropy(const Tensor& logits, const LabelMap& labels,
                                 std::optional<std::int32_t> ignore_index = std::nullopt);

/// Per-pixel argmax over channels.
LabelMap argmax_channels(const Tensor& logits);

}  // namespace ops
}  // namespace cac
