// SPDX-License-Identifier: Apache-2.0
#include "cac/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cac/errors.hpp"

namespace cac {

std::string_view to_string(PaddingMode mode) { return mode == PaddingMode::zero ? "zero" : "circular"; }

PaddingMode padding_from_string(std::string_view name) {
  if (name == "zero") return PaddingMode::zero;
  if (name == "circular") return PaddingMode::circular;
  throw ConfigError("unknown padding mode '" + std::string(name) + "' (expected zero or circular)");
}

namespace ops {
namespace {

std::string str(const Tensor& t) { return shape_to_string(t.shape()); }

// Maps a possibly out-of-range coordinate into [0, extent); returns -1 when
// the read falls in the zero padding.
inline long wrap_index(long idx, long extent, PaddingMode pad) {
  if (idx >= 0 && idx < extent) return idx;
  if (pad == PaddingMode::zero) return -1;
  long m = idx % extent;
  return m < 0 ? m + extent : m;
}

struct KernelLayout {
  std::size_t items;  // 1 for shared kernels
  std::size_t size;   // s
};

KernelLayout check_depthwise(const Tensor& x, const Tensor& kernel, std::size_t dilation) {
  require_rank(x, 4, "conv2d_depthwise_dilated input");
  KernelLayout layout{};
  std::size_t channels = 0;
  if (kernel.rank() == 3) {
    layout.items = 1;
    layout.size = kernel.dim(0);
    if (kernel.dim(1) != layout.size) throw DimensionError("depthwise kernel must be square, got " + str(kernel));
    channels = kernel.dim(2);
  } else if (kernel.rank() == 4) {
    layout.items = kernel.dim(0);
    layout.size = kernel.dim(1);
    if (kernel.dim(2) != layout.size) throw DimensionError("depthwise kernel must be square, got " + str(kernel));
    channels = kernel.dim(3);
    if (layout.items != 1 && layout.items != x.dim(0)) {
      throw DimensionError("per-item kernel stack " + str(kernel) + " does not match batch of input " + str(x));
    }
  } else {
    throw DimensionError("depthwise kernel must be (s, s, c) or (n, s, s, c), got " + str(kernel));
  }
  if (channels != x.dim(1)) {
    throw DimensionError("depthwise kernel " + str(kernel) + " does not match input channels " + str(x));
  }
  if (layout.size % 2 == 0) {
    throw ConfigError("depthwise kernel size must be odd, got " + std::to_string(layout.size));
  }
  if (dilation < 1) throw ConfigError("dilation must be >= 1");
  return layout;
}

}  // namespace

// -- matmul -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + str(a) + " and " + str(b));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[i * k + t];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[t * n + j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& m) {
  require_rank(m, 2, "transpose");
  const std::size_t r = m.dim(0), c = m.dim(1);
  Tensor t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = m[i * c + j];
  return t;
}

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out) {
  if (grad_out.rank() != 2 || grad_out.dim(0) != a.dim(0) || grad_out.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_backward: upstream grad " + str(grad_out) + " does not match " + str(a) + " x " +
                         str(b));
  }
  return {matmul(grad_out, transpose(b)), matmul(transpose(a), grad_out)};
}

// -- pointwise conv -------------------------------------------------------------

Tensor conv2d_pointwise(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  require_rank(x, 4, "conv2d_pointwise input");
  require_rank(weight, 2, "conv2d_pointwise weight");
  const std::size_t nb = x.dim(0), cin = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    throw DimensionError("conv2d_pointwise: weight " + str(weight) + " does not match input channels of " + str(x));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw DimensionError("conv2d_pointwise: bias " + str(*bias) + " does not match " + std::to_string(cout) +
                         " output channels");
  }
  Tensor y({nb, cout, x.dim(2), x.dim(3)});
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* out = &y[(n * cout + o) * hw];
      if (bias) std::fill(out, out + hw, (*bias)[o]);
      for (std::size_t i = 0; i < cin; ++i) {
        const double w = weight[o * cin + i];
        const double* in = &x[(n * cin + i) * hw];
        for (std::size_t p = 0; p < hw; ++p) out[p] += w * in[p];
      }
    }
  }
  return y;
}

PointwiseGrads conv2d_pointwise_backward(const Tensor& x, const Tensor& weight, bool has_bias,
                                         const Tensor& grad_out) {
  const std::size_t nb = x.dim(0), cin = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t cout = weight.dim(0);
  if (grad_out.shape() != Shape{nb, cout, x.dim(2), x.dim(3)}) {
    throw DimensionError("conv2d_pointwise_backward: upstream grad " + str(grad_out) + " mismatched");
  }
  PointwiseGrads g{Tensor(x.shape()), Tensor(weight.shape()), has_bias ? Tensor({cout}) : Tensor()};
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      const double* go = &grad_out[(n * cout + o) * hw];
      if (has_bias) {
        double s = 0.0;
        for (std::size_t p = 0; p < hw; ++p) s += go[p];
        g.dbias[o] += s;
      }
      for (std::size_t i = 0; i < cin; ++i) {
        const double w = weight[o * cin + i];
        const double* in = &x[(n * cin + i) * hw];
        double* dx = &g.dx[(n * cin + i) * hw];
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) {
          acc += go[p] * in[p];
          dx[p] += w * go[p];
        }
        g.dweight[o * cin + i] += acc;
      }
    }
  }
  return g;
}

// -- depthwise ----------------------------------------------------------------

// Contiguous runs along one axis: positions [dst, dst + len) read source
// positions [src, src + len) for a fixed tap offset.
struct Run {
  std::size_t dst, src, len;
};

std::vector<Run> tap_runs(long offset, std::size_t extent, PaddingMode pad) {
  std::vector<Run> runs;
  const long n = static_cast<long>(extent);
  for (long i = 0; i < n; ++i) {
    const long src = wrap_index(i + offset, n, pad);
    if (src < 0) continue;
    if (!runs.empty()) {
      Run& last = runs.back();
      if (last.dst + last.len == static_cast<std::size_t>(i) && last.src + last.len == static_cast<std::size_t>(src)) {
        ++last.len;
        continue;
      }
    }
    runs.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(src), 1});
  }
  return runs;
}

// Per-tap row sources (-1 in the zero padding) and column runs.
struct TapPlan {
  std::vector<std::vector<long>> rows;     // [u][y]
  std::vector<std::vector<Run>> columns;   // [v]
};

TapPlan plan_taps(std::size_t s, std::size_t dilation, std::size_t h, std::size_t w, PaddingMode pad) {
  const long r = static_cast<long>(s / 2), d = static_cast<long>(dilation);
  TapPlan plan;
  for (std::size_t u = 0; u < s; ++u) {
    std::vector<long> rows(h);
    for (std::size_t y = 0; y < h; ++y) {
      rows[y] = wrap_index(static_cast<long>(y) + (static_cast<long>(u) - r) * d, static_cast<long>(h), pad);
    }
    plan.rows.push_back(std::move(rows));
    plan.columns.push_back(tap_runs((static_cast<long>(u) - r) * d, w, pad));
  }
  return plan;
}

Tensor conv2d_depthwise_dilated(const Tensor& x, const Tensor& kernel, std::size_t dilation, PaddingMode pad) {
  const auto layout = check_depthwise(x, kernel, dilation);
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), s = layout.size;
  const TapPlan plan = plan_taps(s, dilation, h, w, pad);
  Tensor y(x.shape());
  for (std::size_t n = 0; n < nb; ++n) {
    const std::size_t kn = layout.items == 1 ? 0 : n;
    for (std::size_t j = 0; j < c; ++j) {
      const double* in = &x[(n * c + j) * h * w];
      double* out = &y[(n * c + j) * h * w];
      for (std::size_t u = 0; u < s; ++u) {
        for (std::size_t v = 0; v < s; ++v) {
          const double k = kernel[((kn * s + u) * s + v) * c + j];
          for (std::size_t yy = 0; yy < h; ++yy) {
            const long sy = plan.rows[u][yy];
            if (sy < 0) continue;
            const double* src_row = in + static_cast<std::size_t>(sy) * w;
            double* dst_row = out + yy * w;
            for (const Run& run : plan.columns[v]) {
              for (std::size_t i = 0; i < run.len; ++i) dst_row[run.dst + i] += k * src_row[run.src + i];
            }
          }
        }
      }
    }
  }
  return y;
}

DepthwiseGrads conv2d_depthwise_dilated_backward(const Tensor& x, const Tensor& kernel, std::size_t dilation,
                                                 PaddingMode pad, const Tensor& grad_out) {
  const auto layout = check_depthwise(x, kernel, dilation);
  require_same_shape(x, grad_out, "conv2d_depthwise_dilated_backward");
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), s = layout.size;
  const TapPlan plan = plan_taps(s, dilation, h, w, pad);
  DepthwiseGrads g{Tensor(x.shape()), Tensor(kernel.shape())};
  for (std::size_t n = 0; n < nb; ++n) {
    const std::size_t kn = layout.items == 1 ? 0 : n;
    for (std::size_t j = 0; j < c; ++j) {
      const double* in = &x[(n * c + j) * h * w];
      const double* go = &grad_out[(n * c + j) * h * w];
      double* dx = &g.dx[(n * c + j) * h * w];
      for (std::size_t u = 0; u < s; ++u) {
        for (std::size_t v = 0; v < s; ++v) {
          const std::size_t ki = ((kn * s + u) * s + v) * c + j;
          const double k = kernel[ki];
          double acc = 0.0;
          for (std::size_t yy = 0; yy < h; ++yy) {
            const long sy = plan.rows[u][yy];
            if (sy < 0) continue;
            const double* src_row = in + static_cast<std::size_t>(sy) * w;
            double* dx_row = dx + static_cast<std::size_t>(sy) * w;
            const double* go_row = go + yy * w;
            for (const Run& run : plan.columns[v]) {
              for (std::size_t i = 0; i < run.len; ++i) {
                const double gv = go_row[run.dst + i];
                acc += src_row[run.src + i] * gv;
                dx_row[run.src + i] += k * gv;
              }
            }
          }
          g.dkernel[ki] += acc;
        }
      }
    }
  }
  return g;
}

// -- pooling -----------------------------------------------------------------

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw DimensionError("global_avg_pool: empty spatial extent " + str(x));
  Tensor g({nb, c});
  for (std::size_t i = 0; i < nb * c; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += x[i * hw + p];
    g[i] = s / static_cast<double>(hw);
  }
  return g;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  const std::size_t hw = input_shape.at(2) * input_shape.at(3);
  Tensor dx = broadcast_spatial(grad_out, input_shape.at(2), input_shape.at(3));
  const double inv = 1.0 / static_cast<double>(hw);
  for (auto& v : dx.data()) v *= inv;
  return dx;
}

Tensor broadcast_spatial(const Tensor& v, std::size_t height, std::size_t width) {
  require_rank(v, 2, "broadcast_spatial");
  const std::size_t nb = v.dim(0), c = v.dim(1), hw = height * width;
  Tensor y({nb, c, height, width});
  for (std::size_t i = 0; i < nb * c; ++i) std::fill_n(&y[i * hw], hw, v[i]);
  return y;
}

Tensor broadcast_spatial_backward(const Tensor& grad_out) {
  require_rank(grad_out, 4, "broadcast_spatial_backward");
  const std::size_t nb = grad_out.dim(0), c = grad_out.dim(1), hw = grad_out.dim(2) * grad_out.dim(3);
  Tensor g({nb, c});
  for (std::size_t i = 0; i < nb * c; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += grad_out[i * hw + p];
    g[i] = s;
  }
  return g;
}

Tensor avg_pool_downsample(const Tensor& x, std::size_t factor) {
  require_rank(x, 4, "avg_pool_downsample");
  if (factor < 1) throw ConfigError("avg_pool_downsample: factor must be >= 1");
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % factor || w % factor) {
    throw DimensionError("avg_pool_downsample: extents " + str(x) + " not divisible by " + std::to_string(factor));
  }
  const std::size_t oh = h / factor, ow = w / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  Tensor y({nb, c, oh, ow});
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = 0.0;
          for (std::size_t a = 0; a < factor; ++a)
            for (std::size_t b = 0; b < factor; ++b) s += x.at(n, j, oy * factor + a, ox * factor + b);
          y.at(n, j, oy, ox) = s * inv;
        }
  return y;
}

Tensor avg_pool_downsample_backward(const Shape& input_shape, std::size_t factor, const Tensor& grad_out) {
  Tensor dx(input_shape);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t n = 0; n < input_shape[0]; ++n)
    for (std::size_t j = 0; j < input_shape[1]; ++j)
      for (std::size_t y = 0; y < input_shape[2]; ++y)
        for (std::size_t x = 0; x < input_shape[3]; ++x) dx.at(n, j, y, x) = grad_out.at(n, j, y / factor, x / factor) * inv;
  return dx;
}

// -- bilinear -------------------------------------------------------------------

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;  // weight of hi
};

std::vector<Tap> bilinear_taps(std::size_t in_extent, std::size_t factor) {
  std::vector<Tap> taps(in_extent * factor);
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) * inv - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in_extent - 1) lo = in_extent - 1;
    const std::size_t hi = std::min(lo + 1, in_extent - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
  require_rank(x, 4, "bilinear_upsample");
  if (factor < 1) throw ConfigError("bilinear_upsample: factor must be >= 1, got " + std::to_string(factor));
  if (factor == 1) return x;
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ty = bilinear_taps(h, factor), tx = bilinear_taps(w, factor);
  Tensor y({nb, c, h * factor, w * factor});
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t oy = 0; oy < ty.size(); ++oy)
        for (std::size_t ox = 0; ox < tx.size(); ++ox) {
          const auto& a = ty[oy];
          const auto& b = tx[ox];
          const double top = (1.0 - b.frac) * x.at(n, j, a.lo, b.lo) + b.frac * x.at(n, j, a.lo, b.hi);
          const double bot = (1.0 - b.frac) * x.at(n, j, a.hi, b.lo) + b.frac * x.at(n, j, a.hi, b.hi);
          y.at(n, j, oy, ox) = (1.0 - a.frac) * top + a.frac * bot;
        }
  return y;
}

Tensor bilinear_upsample_backward(const Shape& input_shape, std::size_t factor, const Tensor& grad_out) {
  if (factor < 1) throw ConfigError("bilinear_upsample_backward: factor must be >= 1");
  if (factor == 1) return grad_out;
  const std::size_t nb = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const auto ty = bilinear_taps(h, factor), tx = bilinear_taps(w, factor);
  Tensor dx(input_shape);
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t oy = 0; oy < ty.size(); ++oy)
        for (std::size_t ox = 0; ox < tx.size(); ++ox) {
          const auto& a = ty[oy];
          const auto& b = tx[ox];
          const double g = grad_out.at(n, j, oy, ox);
          dx.at(n, j, a.lo, b.lo) += g * (1.0 - a.frac) * (1.0 - b.frac);
          dx.at(n, j, a.lo, b.hi) += g * (1.0 - a.frac) * b.frac;
          dx.at(n, j, a.hi, b.lo) += g * a.frac * (1.0 - b.frac);
          dx.at(n, j, a.hi, b.hi) += g * a.frac * b.frac;
        }
  return dx;
}

Tensor flip_horizontal(const Tensor& x) {
  require_rank(x, 4, "flip_horizontal");
  Tensor y(x.shape());
  const std::size_t w = x.dim(3);
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t j = 0; j < x.dim(1); ++j)
      for (std::size_t r = 0; r < x.dim(2); ++r)
        for (std::size_t c = 0; c < w; ++c) y.at(n, j, r, c) = x.at(n, j, r, w - 1 - c);
  return y;
}

LabelMap flip_horizontal(const LabelMap& labels) {
  LabelMap out(labels.batch, labels.height, labels.width);
  for (std::size_t n = 0; n < labels.batch; ++n)
    for (std::size_t r = 0; r < labels.height; ++r)
      for (std::size_t c = 0; c < labels.width; ++c) out.at(n, r, c) = labels.at(n, r, labels.width - 1 - c);
  return out;
}

// -- elementwise ------------------------------------------------------------

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out) {
  require_same_shape(y, grad_out, "sigmoid_backward");
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = grad_out[i] * y[i] * (1.0 - y[i]);
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return dx;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "multiply");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * factor;
  return y;
}

void add_inplace(Tensor& acc, const Tensor& delta) {
  require_same_shape(acc, delta, "add_inplace");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += delta[i];
}

// -- channels -------------------------------------------------------------------

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const auto& first = parts.front();
  require_rank(first, 4, "concat_channels");
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 4, "concat_channels");
    if (p.dim(0) != first.dim(0) || p.dim(2) != first.dim(2) || p.dim(3) != first.dim(3)) {
      throw DimensionError("concat_channels: " + str(p) + " incompatible with " + str(first));
    }
    total += p.dim(1);
  }
  const std::size_t nb = first.dim(0), hw = first.dim(2) * first.dim(3);
  Tensor y({nb, total, first.dim(2), first.dim(3)});
  for (std::size_t n = 0; n < nb; ++n) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t c = p.dim(1);
      std::copy_n(&p[n * c * hw], c * hw, &y[(n * total + offset) * hw]);
      offset += c;
    }
  }
  return y;
}

std::vector<Tensor> split_channels(const Tensor& x, std::span<const std::size_t> sizes) {
  require_rank(x, 4, "split_channels");
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (total != x.dim(1)) throw DimensionError("split_channels: sizes do not sum to channels of " + str(x));
  const std::size_t nb = x.dim(0), hw = x.dim(2) * x.dim(3);
  std::vector<Tensor> out;
  std::size_t offset = 0;
  for (auto c : sizes) {
    Tensor p({nb, c, x.dim(2), x.dim(3)});
    for (std::size_t n = 0; n < nb; ++n) std::copy_n(&x[(n * total + offset) * hw], c * hw, &p[n * c * hw]);
    out.push_back(std::move(p));
    offset += c;
  }
  return out;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw DimensionError("stack: no inputs");
  Shape shape = items.front().shape();
  const std::size_t per = items.front().size();
  shape.insert(shape.begin(), items.size());
  Tensor y(shape);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items.front().shape()) throw DimensionError("stack: mismatched item shapes");
    std::copy_n(items[i].data().data(), per, &y[i * per]);
  }
  return y;
}

Tensor slice_batch(const Tensor& x, std::size_t n) {
  if (x.rank() < 1 || n >= x.dim(0)) throw DimensionError("slice_batch: index out of range for " + str(x));
  Shape shape = x.shape();
  shape[0] = 1;
  const std::size_t per = x.size() / x.dim(0);
  return Tensor(shape, std::vector<double>(x.data().begin() + static_cast<long>(n * per),
                                           x.data().begin() + static_cast<long>((n + 1) * per)));
}

// -- loss ----------------------------------------------------------------

LossResult softmax_cross_entropy(const Tensor& logits, const LabelMap& labels, std::optional<std::int32_t> ignore_index) {
  require_rank(logits, 4, "softmax_cross_entropy");
  const std::size_t nb = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (labels.batch != nb || labels.height != h || labels.width != w) {
    throw DimensionError("softmax_cross_entropy: labels (" + std::to_string(labels.batch) + ", " +
                         std::to_string(labels.height) + ", " + std::to_string(labels.width) +
                         ") do not match logits " + str(logits));
  }
  const std::size_t hw = h * w;
  LossResult r{0.0, Tensor(logits.shape()), 0};
  std::vector<double> prob(k);
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::int32_t label = labels.values[n * hw + p];
      if (ignore_index && label == *ignore_index) continue;
      if (label < 0 || static_cast<std::size_t>(label) >= k) {
        throw DataError("label " + std::to_string(label) + " out of range [0, " + std::to_string(k) +
                        ") at pixel (n=" + std::to_string(n) + ", y=" + std::to_string(p / w) +
                        ", x=" + std::to_string(p % w) + ")");
      }
      ++r.counted;
    }
  }
  if (r.counted == 0) return r;
  const double inv = 1.0 / static_cast<double>(r.counted);
  double total = 0.0;
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::int32_t label = labels.values[n * hw + p];
      if (ignore_index && label == *ignore_index) continue;
      double m = logits[(n * k) * hw + p];
      for (std::size_t j = 1; j < k; ++j) m = std::max(m, logits[(n * k + j) * hw + p]);
      double z = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        prob[j] = std::exp(logits[(n * k + j) * hw + p] - m);
        z += prob[j];
      }
      total += m + std::log(z) - logits[(n * k + static_cast<std::size_t>(label)) * hw + p];
      for (std::size_t j = 0; j < k; ++j) {
        const double onehot = static_cast<std::size_t>(label) == j ? 1.0 : 0.0;
        r.grad[(n * k + j) * hw + p] = (prob[j] / z - onehot) * inv;
      }
    }
  }
  r.loss = total * inv;
  return r;
}

LabelMap argmax_channels(const Tensor& logits) {
  require_rank(logits, 4, "argmax_channels");
  const std::size_t nb = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3), hw = h * w;
  LabelMap out(nb, h, w);
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t p = 0; p < hw; ++p) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (logits[(n * k + j) * hw + p] > logits[(n * k + best) * hw + p]) best = j;
      out.values[n * hw + p] = static_cast<std::int32_t>(best);
    }
  return out;
}

}  // namespace ops
}  // namespace cac
