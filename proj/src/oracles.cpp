// SPDX-License-Identifier: Apache-2.0
#include "cac/oracles.hpp"

#include <algorithm>
#include <cmath>

#include "cac/errors.hpp"

namespace cac::oracle {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw DimensionError("oracle::matmul: bad shapes");
  Tensor y({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) acc += a.at(i, k) * b.at(k, j);
      y.at(i, j) = acc;
    }
  return y;
}

Tensor pointwise(const Tensor& x, const Tensor& w, const Tensor* bias) {
  const std::size_t nb = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3), cout = w.dim(0);
  if (w.dim(1) != cin) throw DimensionError("oracle::pointwise: channel mismatch");
  Tensor y({nb, cout, h, wd});
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t q = 0; q < wd; ++q) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::size_t i = 0; i < cin; ++i) acc += w.at(o, i) * x.at(n, i, r, q);
          y.at(n, o, r, q) = acc;
        }
  return y;
}

Tensor depthwise(const Tensor& x, const Tensor& kernel, std::size_t dilation, PaddingMode pad) {
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const bool shared = kernel.rank() == 3;
  const std::size_t s = shared ? kernel.dim(0) : kernel.dim(1);
  const long half = static_cast<long>(s) / 2;
  const long hh = static_cast<long>(h), ww = static_cast<long>(w), d = static_cast<long>(dilation);
  Tensor y(x.shape());
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t j = 0; j < c; ++j)
      for (long r = 0; r < hh; ++r)
        for (long q = 0; q < ww; ++q) {
          double acc = 0.0;
          for (long u = -half; u <= half; ++u)
            for (long v = -half; v <= half; ++v) {
              long sr = r + u * d, sq = q + v * d;
              const bool inside = sr >= 0 && sr < hh && sq >= 0 && sq < ww;
              if (!inside) {
                if (pad == PaddingMode::zero) continue;
                sr = ((sr % hh) + hh) % hh;
                sq = ((sq % ww) + ww) % ww;
              }
              const std::size_t ku = static_cast<std::size_t>(u + half), kv = static_cast<std::size_t>(v + half);
              const double k = shared ? kernel[(ku * s + kv) * c + j]
                                      : kernel[((n * s + ku) * s + kv) * c + j];
              acc += k * x.at(n, j, static_cast<std::size_t>(sr), static_cast<std::size_t>(sq));
            }
          y.at(n, j, static_cast<std::size_t>(r), static_cast<std::size_t>(q)) = acc;
        }
  return y;
}

Tensor kernel_dot_products(const Tensor& x, const Tensor& wq, const Tensor& wk) {
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), taps = wq.dim(0);
  Tensor d({nb, taps, wk.dim(0)});
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t i = 0; i < taps; ++i)
      for (std::size_t j = 0; j < wk.dim(0); ++j) {
        double dot = 0.0;
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t q = 0; q < w; ++q) {
            double qv = 0.0, kv = 0.0;
            for (std::size_t m = 0; m < c; ++m) {
              qv += wq.at(i, m) * x.at(n, m, r, q);
              kv += wk.at(j, m) * x.at(n, m, r, q);
            }
            dot += qv * kv;
          }
        d[(n * taps + i) * wk.dim(0) + j] = dot;
      }
  return d;
}

Tensor standardize_taps(const Tensor& raw, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t c = raw.shape().back();
  const std::size_t taps = raw.dim(raw.rank() - 2);
  const std::size_t items = raw.size() / (taps * c);
  Tensor out(raw.shape());
  for (std::size_t n = 0; n < items; ++n)
    for (std::size_t j = 0; j < c; ++j) {
      double sum = 0.0;
      for (std::size_t t = 0; t < taps; ++t) sum += raw[(n * taps + t) * c + j];
      const double mean = sum / static_cast<double>(taps);
      double sq = 0.0;
      for (std::size_t t = 0; t < taps; ++t) {
        const double dv = raw[(n * taps + t) * c + j] - mean;
        sq += dv * dv;
      }
      const double sd = std::sqrt(sq / static_cast<double>(taps) + eps);
      for (std::size_t t = 0; t < taps; ++t) {
        const std::size_t k = (n * taps + t) * c + j;
        out[k] = gamma[j] * ((raw[k] - mean) / sd) + beta[j];
      }
    }
  return out;
}

Tensor weight_map(const Tensor& x, const Tensor& kernels, std::span<const std::size_t> dilations, PaddingMode pad) {
  Tensor w(x.shape());
  for (std::size_t d : dilations) {
    const Tensor z = depthwise(x, kernels, d, pad);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += 1.0 / (1.0 + std::exp(-z[i]));
  }
  for (auto& v : w.data()) v /= static_cast<double>(dilations.size());
  return w;
}

Tensor global_avg_pool(const Tensor& x) {
  Tensor g({x.dim(0), x.dim(1)});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t j = 0; j < x.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < x.dim(2); ++r)
        for (std::size_t q = 0; q < x.dim(3); ++q) s += x.at(n, j, r, q);
      g.at(n, j) = s / static_cast<double>(x.dim(2) * x.dim(3));
    }
  return g;
}

double cross_entropy(const Tensor& logits, const LabelMap& labels) {
  const std::size_t nb = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  double total = 0.0;
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < w; ++q) {
        double mx = logits.at(n, 0, r, q);
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits.at(n, c, r, q));
        double se = 0.0;
        for (std::size_t c = 0; c < k; ++c) se += std::exp(logits.at(n, c, r, q) - mx);
        const auto label = static_cast<std::size_t>(labels.at(n, r, q));
        total += mx + std::log(se) - logits.at(n, label, r, q);
      }
  return total / static_cast<double>(nb * h * w);
}

}  // namespace cac::oracle
