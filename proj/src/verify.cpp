// SPDX-License-Identifier: Apache-2.0
#include "cac/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

#include "cac/baselines.hpp"
#include "cac/cac_module.hpp"
#include "cac/errors.hpp"
#include "cac/grad_check.hpp"
#include "cac/head.hpp"
#include "cac/init.hpp"
#include "cac/metrics.hpp"
#include "cac/model.hpp"
#include "cac/oracles.hpp"
#include "cac/ops.hpp"
#include "cac/rng.hpp"
#include "cac/training.hpp"

namespace cac::verify {
namespace {

constexpr double kGradEps = 1e-5;
constexpr double kGradTolerance = 1e-4;

std::uint64_t name_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

CounterRng rng_for(const Options& opts, std::string_view name, std::size_t instance) {
  return CounterRng(derive_key(opts.seed ^ name_hash(name), instance));
}

CheckResult below(std::string name, double value, double tolerance) {
  return {std::move(name), std::isfinite(value) && value < tolerance, value, tolerance};
}

CheckResult exactly_zero(std::string name, double value) { return {std::move(name), value == 0.0, value, 0.0}; }

Tensor rnd(Shape shape, CounterRng& rng, double bound = 1.0) { return uniform_tensor(std::move(shape), bound, rng); }

LabelMap rnd_labels(std::size_t n, std::size_t h, std::size_t w, std::size_t k, CounterRng& rng) {
  LabelMap m(n, h, w);
  for (auto& v : m.values) v = static_cast<std::int32_t>(rng.below(k));
  return m;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "verify dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double spatial_std(const Tensor& w, std::size_t n, std::size_t j) {
  const std::size_t hw = w.dim(2) * w.dim(3);
  const double* v = &w[(n * w.dim(1) + j) * hw];
  // Shifted by the first value so that a constant map gives exactly 0.
  double mean = 0.0;
  for (std::size_t p = 0; p < hw; ++p) mean += v[p] - v[0];
  mean /= static_cast<double>(hw);
  double var = 0.0;
  for (std::size_t p = 0; p < hw; ++p) var += (v[p] - v[0] - mean) * (v[p] - v[0] - mean);
  return std::sqrt(var / static_cast<double>(hw));
}

CaCParams random_cac(const CaCConfig& cfg, CounterRng& rng) {
  CaCParams p = CaCParams::init(cfg, rng);
  if (cfg.use_projection_bias) {
    p.query_bias = rnd(p.query_bias.shape(), rng, 0.5);
    p.key_bias = rnd(p.key_bias.shape(), rng, 0.5);
  }
  for (auto& v : p.norm_gamma.data()) v = rng.uniform(0.5, 1.5);
  for (auto& v : p.norm_beta.data()) v = rng.uniform(-0.5, 0.5);
  return p;
}

// -- gradient harness -------------------------------------------------------------

struct GradProblem {
  std::vector<Tensor*> inputs;
  std::function<double()> loss;
  std::function<void()> backward;  // accumulates into the inputs' grad slots
};

double grad_error(const GradProblem& p, bool fault) {
  std::vector<double> flat;
  for (const Tensor* t : p.inputs) flat.insert(flat.end(), t->data().begin(), t->data().end());
  const ScalarObjective objective = [&](std::span<const double> v, std::span<double> g) {
    std::size_t o = 0;
    for (Tensor* t : p.inputs) {
      std::copy_n(v.begin() + static_cast<long>(o), t->size(), t->data().begin());
      o += t->size();
    }
    if (!g.empty()) {
      for (Tensor* t : p.inputs) t->zero_grad();
      p.backward();
      o = 0;
      for (Tensor* t : p.inputs) {
        const auto tg = std::as_const(*t).grad();
        std::copy(tg.begin(), tg.end(), g.begin() + static_cast<long>(o));
        o += t->size();
      }
      if (fault) {
        for (auto& x : g) x += 1e-2;
      }
    }
    return p.loss();
  };
  return grad_check(objective, flat, kGradEps, kGradTolerance).max_rel_error;
}

void add_params(std::vector<Tensor*>& inputs, std::vector<ParamRef> refs) {
  for (auto& r : refs) inputs.push_back(r.tensor);
}

// -- head / model problems shared by several checks ------------------------------

double head_loss_error(HeadKind kind, CounterRng& rng, bool fault) {
  HeadConfig cfg;
  cfg.kind = kind;
  cfg.cac.channels = 4;
  cfg.cac.kernel_size = 3;
  cfg.cac.dilations = {1, 2};
  cfg.cac.heads = 2;
  cfg.se_reduction = 2;
  cfg.num_classes = 3;
  cfg.feature_height = 5;
  cfg.feature_width = 5;
  SegHead head = SegHead::init(cfg, rng);
  for (auto& m : head.modules) {
    if (auto* c = std::get_if<CaCParams>(&m)) {
      for (auto& v : c->norm_gamma.data()) v = rng.uniform(0.5, 1.5);
      for (auto& v : c->norm_beta.data()) v = rng.uniform(-0.5, 0.5);
    }
  }
  head.classifier_bias = rnd({3}, rng, 0.5);
  Tensor x = rnd({1, 4, 5, 5}, rng);
  const LabelMap labels = rnd_labels(1, 5, 5, 3, rng);

  GradProblem p;
  p.inputs.push_back(&x);
  add_params(p.inputs, head.parameters("head."));
  p.loss = [&] { return ops::softmax_cross_entropy(head_forward(x, head, cfg), labels).loss; };
  p.backward = [&] {
    HeadCache cache;
    const Tensor logits = head_forward(x, head, cfg, &cache);
    const auto ce = ops::softmax_cross_entropy(logits, labels);
    x.accumulate_grad(head_backward(cache, head, cfg, ce.grad));
  };
  return grad_error(p, fault);
}

double model_loss_error(CounterRng& rng, bool fault) {
  ModelConfig cfg;
  cfg.image_height = 8;
  cfg.image_width = 8;
  cfg.backbone.channels = 4;
  cfg.backbone.depth = 2;
  cfg.backbone.stride = 2;
  cfg.backbone.freeze = false;
  cfg.head.cac.dilations = {1, 2};
  cfg.head.cac.heads = 2;
  cfg.finalize();
  SegmentationModel model = SegmentationModel::init(cfg, rng);
  const Tensor images = rnd({2, 3, 8, 8}, rng);
  model.calibrate_backbone(images);
  const LabelMap labels = rnd_labels(2, 8, 8, 3, rng);
  const double aux_weight = 0.2;

  GradProblem p;
  add_params(p.inputs, model.trainable_parameters());
  p.loss = [&] {
    const ModelOutput out = model.forward(images);
    return ops::softmax_cross_entropy(out.logits, labels).loss +
           aux_weight * ops::softmax_cross_entropy(out.aux_logits, labels).loss;
  };
  p.backward = [&] {
    ModelCache cache;
    const ModelOutput out = model.forward(images, &cache);
    const auto main = ops::softmax_cross_entropy(out.logits, labels);
    const auto aux = ops::softmax_cross_entropy(out.aux_logits, labels);
    model.backward(cache, main.grad, ops::scale(aux.grad, aux_weight));
  };
  return grad_error(p, fault);
}

}  // namespace

// -- oracles ------------------------------------------------------------------

std::vector<CheckResult> run_oracles(const Options& opts) {
  std::vector<CheckResult> out;
  const std::size_t n_inst = std::max<std::size_t>(opts.instances, 1);

  {
    double raw_err = 0.0, norm_err = 0.0;
    for (std::size_t i = 0; i < n_inst; ++i) {
      CounterRng rng = rng_for(opts, "oracle.kernel_prediction", i);
      CaCConfig cfg;
      cfg.channels = 1 + rng.below(16);
      cfg.kernel_size = rng.below(2) ? 5 : 3;
      const std::size_t n = 1 + rng.below(2), h = 1 + rng.below(8), w = 1 + rng.below(8);
      const CaCParams params = random_cac(cfg, rng);
      const Tensor x = rnd({n, cfg.channels, h, w}, rng);
      KernelPredictionTrace trace;
      const PredictedKernels k = predict_cac_kernels(x, params, cfg, &trace);
      const Tensor expect_raw = oracle::kernel_dot_products(x, params.query_weight, params.key_weight);
      raw_err = std::max(raw_err, max_rel_diff(trace.raw.reshaped(expect_raw.shape()), expect_raw));
      const Tensor expect_norm = oracle::standardize_taps(trace.raw.reshaped(expect_raw.shape()), params.norm_gamma,
                                                            params.norm_beta, cfg.norm_eps);
      norm_err = std::max(norm_err, max_abs_diff(k.kernels.reshaped(expect_norm.shape()), expect_norm));
    }
    out.push_back(below("oracle.kernel_prediction", raw_err, 1e-10));
    out.push_back(below("oracle.normalize_kernels", norm_err, 1e-12));
  }
  {
    double err = 0.0;
    for (std::size_t i = 0; i < n_inst; ++i) {
      CounterRng rng = rng_for(opts, "oracle.depthwise", i);
      const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(6), h = 1 + rng.below(9), w = 1 + rng.below(9);
      const std::size_t s = rng.below(2) ? 5 : 3, d = 1 + rng.below(3);
      const PaddingMode pad = i % 2 ? PaddingMode::circular : PaddingMode::zero;
      const Tensor x = rnd({n, c, h, w}, rng);
      const Tensor k = i % 3 == 0 ? rnd({n, s, s, c}, rng) : rnd({s, s, c}, rng);
      err = std::max(err, max_abs_diff(ops::conv2d_depthwise_dilated(x, k, d, pad), oracle::depthwise(x, k, d, pad)));
    }
    out.push_back(below("oracle.conv2d_depthwise_dilated", err, 1e-12));
  }
  {
    double pw = 0.0, mm = 0.0, gp = 0.0, ce = 0.0, wm = 0.0, rw = 0.0;
    for (std::size_t i = 0; i < n_inst; ++i) {
      CounterRng rng = rng_for(opts, "oracle.misc", i);
      const std::size_t n = 1 + rng.below(3), c = 1 + rng.below(6), h = 1 + rng.below(7), w = 1 + rng.below(7);
      const Tensor x = rnd({n, c, h, w}, rng);
      const Tensor wt = rnd({3, c}, rng), b = rnd({3}, rng);
      pw = std::max(pw, max_abs_diff(ops::conv2d_pointwise(x, wt, &b), oracle::pointwise(x, wt, &b)));
      const Tensor a = rnd({c, h}, rng), bm = rnd({h, w}, rng);
      mm = std::max(mm, max_abs_diff(ops::matmul(a, bm), oracle::matmul(a, bm)));
      gp = std::max(gp, max_abs_diff(ops::global_avg_pool(x), oracle::global_avg_pool(x)));
      const Tensor logits = rnd({n, 3, h, w}, rng, 4.0);
      const LabelMap labels = rnd_labels(n, h, w, 3, rng);
      const double expect = oracle::cross_entropy(logits, labels);
      ce = std::max(ce, std::abs(ops::softmax_cross_entropy(logits, labels).loss - expect) / std::max(1.0, expect));
      const std::vector<std::size_t> dil{1, 2, 3};
      const Tensor kern = rnd({n, 3, 3, c}, rng);
      const PaddingMode pad = i % 2 ? PaddingMode::circular : PaddingMode::zero;
      const Tensor wmap = generate_weight_map(x, kern, dil, pad);
      wm = std::max(wm, max_abs_diff(wmap, oracle::weight_map(x, kern, dil, pad)));
      Tensor expect_rw(x.shape());
      for (std::size_t k = 0; k < x.size(); ++k) expect_rw[k] = x[k] * wmap[k];
      rw = std::max(rw, max_abs_diff(reweight(x, wmap), expect_rw));
    }
    out.push_back(below("oracle.conv2d_pointwise", pw, 1e-12));
    out.push_back(below("oracle.matmul", mm, 1e-12));
    out.push_back(below("oracle.global_avg_pool", gp, 1e-12));
    out.push_back(below("oracle.softmax_cross_entropy", ce, 1e-12));
    out.push_back(below("oracle.generate_weight_map", wm, 1e-12));
    out.push_back(exactly_zero("oracle.reweight", rw));
  }
  {
    // cac_forward against the oracle pipeline: dot products, standardization,
    // weight map, product.
    double err = 0.0;
    for (std::size_t i = 0; i < n_inst; ++i) {
      CounterRng rng = rng_for(opts, "oracle.cac_forward", i);
      CaCConfig cfg;
      cfg.channels = 1 + rng.below(8);
      cfg.kernel_size = 3;
      cfg.padding = i % 2 ? PaddingMode::circular : PaddingMode::zero;
      const std::size_t n = 1 + rng.below(2), h = 2 + rng.below(6), w = 2 + rng.below(6);
      const CaCParams params = random_cac(cfg, rng);
      const Tensor x = rnd({n, cfg.channels, h, w}, rng);
      const Tensor raw = oracle::kernel_dot_products(x, params.query_weight, params.key_weight);
      const Tensor kern = oracle::standardize_taps(raw, params.norm_gamma, params.norm_beta, cfg.norm_eps)
                              .reshaped({n, 3, 3, cfg.channels});
      const Tensor wmap = oracle::weight_map(x, kern, cfg.dilations, cfg.padding);
      Tensor expect(x.shape());
      for (std::size_t k = 0; k < x.size(); ++k) expect[k] = x[k] * wmap[k];
      err = std::max(err, max_rel_diff(cac_forward(x, params, cfg), expect));
    }
    out.push_back(below("oracle.cac_forward", err, 1e-10));
  }
  {
    double gap = 0.0, dwfc = 0.0, se = 0.0;
    for (std::size_t i = 0; i < n_inst; ++i) {
      CounterRng rng = rng_for(opts, "oracle.baselines", i);
      const std::size_t n = 1 + rng.below(2), c = 4 * (1 + rng.below(3)), h = 1 + rng.below(6), w = 1 + rng.below(6);
      const std::size_t s = 3, t = s * s;
      const Tensor x = rnd({n, c, h, w}, rng);
      const GapKernelParams gp = GapKernelParams::init(c, s, rng);
      const Tensor pooled = oracle::global_avg_pool(x);
      Tensor expect_gap({n, s, s, c});
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < t * c; ++o) {
          double acc = 0.0;
          for (std::size_t m = 0; m < c; ++m) acc += pooled.at(b, m) * gp.projection.at(m, o);
          expect_gap[b * t * c + o] = acc;
        }
      gap = std::max(gap, max_abs_diff(gap_predict_kernels(x, gp), expect_gap));

      const DwFcKernelParams dp = DwFcKernelParams::init(c, s, h, w, rng);
      Tensor expect_dw({n, s, s, c});
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t tap = 0; tap < t; ++tap)
          for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < h; ++r)
              for (std::size_t q = 0; q < w; ++q) acc += dp.weights[((r * w + q) * t + tap) * c + j] * x.at(b, j, r, q);
            expect_dw[(b * t + tap) * c + j] = acc;
          }
      dwfc = std::max(dwfc, max_abs_diff(dwfc_predict_kernels(x, dp), expect_dw));

      const SEParams sp = SEParams::init(c, 4, rng);
      Tensor expect_se({n, c});
      for (std::size_t b = 0; b < n; ++b) {
        std::vector<double> hidden(c / 4);
        for (std::size_t k = 0; k < c / 4; ++k) {
          double acc = 0.0;
          for (std::size_t m = 0; m < c; ++m) acc += sp.reduce.at(k, m) * pooled.at(b, m);
          hidden[k] = std::max(0.0, acc);
        }
        for (std::size_t j = 0; j < c; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < c / 4; ++k) acc += sp.expand.at(j, k) * hidden[k];
          expect_se.at(b, j) = 1.0 / (1.0 + std::exp(-acc));
        }
      }
      se = std::max(se, max_abs_diff(se_gates(x, sp), expect_se));
    }
    out.push_back(below("oracle.gap_predict_kernels", gap, 1e-12));
    out.push_back(below("oracle.dwfc_predict_kernels", dwfc, 1e-12));
    out.push_back(below("oracle.se_gates", se, 1e-12));
  }
  return out;
}

// -- gradients ----------------------------------------------------------------

std::vector<CheckResult> run_grads(const Options& opts) {
  std::vector<CheckResult> out;
  const std::size_t seeds = std::max<std::size_t>(opts.grad_seeds, 1);

  auto check = [&](const std::string& name, const std::function<double(CounterRng&, std::size_t, bool)>& problem) {
    const bool fault = opts.inject_gradient_fault == name;
    double worst = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      CounterRng rng = rng_for(opts, name, s);
      worst = std::max(worst, problem(rng, s, fault));
    }
    out.push_back(below(name, worst, kGradTolerance));
  };

  // Linear probe r . f(inputs) for operators with a tensor output.
  auto probe = [](std::vector<Tensor*> inputs, std::function<Tensor()> f,
                  std::function<void(const Tensor&)> back, CounterRng& rng, bool fault) {
    const Tensor r = rnd(f().shape(), rng);
    GradProblem p{std::move(inputs), [&] { return dot(r, f()); }, [&] { back(r); }};
    return grad_error(p, fault);
  };

  check("grad.matmul", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor a = rnd({3, 4}, rng), b = rnd({4, 5}, rng);
    return probe({&a, &b}, [&] { return ops::matmul(a, b); },
                 [&](const Tensor& g) {
                   auto d = ops::matmul_backward(a, b, g);
                   a.accumulate_grad(d.da);
                   b.accumulate_grad(d.db);
                 },
                 rng, fault);
  });
  check("grad.conv2d_pointwise", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor x = rnd({2, 3, 4, 5}, rng), w = rnd({4, 3}, rng), b = rnd({4}, rng);
    return probe({&x, &w, &b}, [&] { return ops::conv2d_pointwise(x, w, &b); },
                 [&](const Tensor& g) {
                   auto d = ops::conv2d_pointwise_backward(x, w, true, g);
                   x.accumulate_grad(d.dx);
                   w.accumulate_grad(d.dweight);
                   b.accumulate_grad(d.dbias);
                 },
                 rng, fault);
  });
  for (PaddingMode pad : {PaddingMode::zero, PaddingMode::circular}) {
    check(std::string("grad.conv2d_depthwise_dilated.") + std::string(to_string(pad)),
          [&, pad](CounterRng& rng, std::size_t s, bool fault) {
            const std::size_t ks = s % 2 ? 5 : 3, d = 1 + s % 3;
            Tensor x = rnd({2, 3, 6, 5}, rng);
            Tensor k = s % 2 ? rnd({2, ks, ks, 3}, rng) : rnd({ks, ks, 3}, rng);
            return probe({&x, &k}, [&] { return ops::conv2d_depthwise_dilated(x, k, d, pad); },
                         [&](const Tensor& g) {
                           auto r = ops::conv2d_depthwise_dilated_backward(x, k, d, pad, g);
                           x.accumulate_grad(r.dx);
                           k.accumulate_grad(r.dkernel);
                         },
                         rng, fault);
          });
  }
  check("grad.global_avg_pool", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor x = rnd({2, 3, 4, 4}, rng);
    return probe({&x}, [&] { return ops::global_avg_pool(x); },
                 [&](const Tensor& g) { x.accumulate_grad(ops::global_avg_pool_backward(x.shape(), g)); }, rng, fault);
  });
  check("grad.broadcast_spatial", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor v = rnd({2, 3}, rng);
    return probe({&v}, [&] { return ops::broadcast_spatial(v, 4, 5); },
                 [&](const Tensor& g) { v.accumulate_grad(ops::broadcast_spatial_backward(g)); }, rng, fault);
  });
  check("grad.avg_pool_downsample", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor x = rnd({2, 2, 6, 4}, rng);
    return probe({&x}, [&] { return ops::avg_pool_downsample(x, 2); },
                 [&](const Tensor& g) { x.accumulate_grad(ops::avg_pool_downsample_backward(x.shape(), 2, g)); }, rng,
                 fault);
  });
  check("grad.bilinear_upsample", [&](CounterRng& rng, std::size_t s, bool fault) {
    const std::size_t f = 2 + s % 2;
    Tensor x = rnd({2, 2, 3, 4}, rng);
    return probe({&x}, [&] { return ops::bilinear_upsample(x, f); },
                 [&](const Tensor& g) { x.accumulate_grad(ops::bilinear_upsample_backward(x.shape(), f, g)); }, rng,
                 fault);
  });
  check("grad.sigmoid", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor x = rnd({2, 3, 3, 3}, rng, 3.0);
    return probe({&x}, [&] { return ops::sigmoid(x); },
                 [&](const Tensor& g) { x.accumulate_grad(ops::sigmoid_backward(ops::sigmoid(x), g)); }, rng, fault);
  });
  check("grad.relu", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor x = rnd({2, 3, 3, 3}, rng);
    for (auto& v : x.data()) v = v < 0 ? v - 0.05 : v + 0.05;  // stay clear of the kink
    return probe({&x}, [&] { return ops::relu(x); },
                 [&](const Tensor& g) { x.accumulate_grad(ops::relu_backward(x, g)); }, rng, fault);
  });
  check("grad.softmax_cross_entropy", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor logits = rnd({2, 3, 4, 4}, rng, 3.0);
    const LabelMap labels = rnd_labels(2, 4, 4, 3, rng);
    GradProblem p{{&logits},
                  [&] { return ops::softmax_cross_entropy(logits, labels).loss; },
                  [&] { logits.accumulate_grad(ops::softmax_cross_entropy(logits, labels).grad); }};
    return grad_error(p, fault);
  });
  check("grad.normalize_kernels", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor raw = rnd({2, 3, 3, 4}, rng, 2.0), gamma = rnd({4}, rng), beta = rnd({4}, rng);
    return probe({&raw, &gamma, &beta}, [&] { return normalize_kernels(raw, gamma, beta, 1e-5); },
                 [&](const Tensor& g) {
                   KernelNormCache cache;
                   normalize_kernels(raw, gamma, beta, 1e-5, &cache);
                   auto d = normalize_kernels_backward(cache, gamma, g);
                   raw.accumulate_grad(d.draw);
                   gamma.accumulate_grad(d.dgamma);
                   beta.accumulate_grad(d.dbeta);
                 },
                 rng, fault);
  });
  check("grad.generate_weight_map", [&](CounterRng& rng, std::size_t s, bool fault) {
    const PaddingMode pad = s % 2 ? PaddingMode::circular : PaddingMode::zero;
    const std::vector<std::size_t> dil{1, 2};
    Tensor x = rnd({2, 3, 5, 5}, rng), k = rnd({2, 3, 3, 3}, rng);
    return probe({&x, &k}, [&] { return generate_weight_map(x, k, dil, pad); },
                 [&](const Tensor& g) {
                   WeightMapCache cache;
                   generate_weight_map(x, k, dil, pad, &cache);
                   auto d = generate_weight_map_backward(x, k, dil, pad, cache, g);
                   x.accumulate_grad(d.dx);
                   k.accumulate_grad(d.dkernels);
                 },
                 rng, fault);
  });
  check("grad.reweight", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor x = rnd({2, 3, 4, 4}, rng), w = rnd({2, 3, 4, 4}, rng);
    return probe({&x, &w}, [&] { return reweight(x, w); },
                 [&](const Tensor& g) {
                   auto d = reweight_backward(x, w, g);
                   x.accumulate_grad(d.dx);
                   w.accumulate_grad(d.dweights);
                 },
                 rng, fault);
  });
  check("grad.global_pool_branch", [&](CounterRng& rng, std::size_t, bool fault) {
    Tensor x = rnd({2, 3, 4, 5}, rng);
    return probe({&x}, [&] { return global_pool_branch(x); },
                 [&](const Tensor& g) { x.accumulate_grad(global_pool_branch_backward(x.shape(), g)); }, rng, fault);
  });
  check("grad.cac_forward", [&](CounterRng& rng, std::size_t s, bool fault) {
    CaCConfig cfg;
    cfg.channels = 4;
    cfg.dilations = {1, 2};
    cfg.use_projection_bias = s % 2 == 1;
    cfg.padding = s % 2 ? PaddingMode::circular : PaddingMode::zero;
    cfg.batch_mode = s % 3 == 2 ? KernelBatchMode::batch_mean : KernelBatchMode::per_item;
    CaCParams params = random_cac(cfg, rng);
    Tensor x = rnd({2, 4, 5, 5}, rng);
    std::vector<Tensor*> inputs{&x};
    add_params(inputs, params.parameters(""));
    return probe(inputs, [&] { return cac_forward(x, params, cfg); },
                 [&](const Tensor& g) {
                   CaCCache cache;
                   cac_forward(x, params, cfg, &cache);
                   x.accumulate_grad(cac_backward(cache, params, cfg, g));
                 },
                 rng, fault);
  });
  check("grad.fixed_kernel", [&](CounterRng& rng, std::size_t s, bool fault) {
    const std::vector<std::size_t> dil{1, 2};
    const PaddingMode pad = s % 2 ? PaddingMode::circular : PaddingMode::zero;
    FixedKernelParams params = FixedKernelParams::init(3, 3, rng);
    Tensor x = rnd({2, 3, 5, 5}, rng);
    std::vector<Tensor*> inputs{&x};
    add_params(inputs, params.parameters(""));
    return probe(inputs, [&] { return fixed_kernel_forward(x, params, dil, pad); },
                 [&](const Tensor& g) {
                   KernelReweightCache cache;
                   fixed_kernel_forward(x, params, dil, pad, &cache);
                   x.accumulate_grad(fixed_kernel_backward(cache, params, dil, pad, g));
                 },
                 rng, fault);
  });
  check("grad.gap_kernel", [&](CounterRng& rng, std::size_t s, bool fault) {
    const std::vector<std::size_t> dil{1, 2};
    const PaddingMode pad = s % 2 ? PaddingMode::circular : PaddingMode::zero;
    GapKernelParams params = GapKernelParams::init(3, 3, rng);
    Tensor x = rnd({2, 3, 5, 5}, rng);
    std::vector<Tensor*> inputs{&x};
    add_params(inputs, params.parameters(""));
    return probe(inputs, [&] { return gap_kernel_forward(x, params, dil, pad); },
                 [&](const Tensor& g) {
                   GapKernelCache cache;
                   gap_kernel_forward(x, params, dil, pad, &cache);
                   x.accumulate_grad(gap_kernel_backward(cache, params, dil, pad, g));
                 },
                 rng, fault);
  });
  check("grad.dwfc_kernel", [&](CounterRng& rng, std::size_t s, bool fault) {
    const std::vector<std::size_t> dil{1, 2};
    const PaddingMode pad = s % 2 ? PaddingMode::circular : PaddingMode::zero;
    DwFcKernelParams params = DwFcKernelParams::init(3, 3, 4, 5, rng);
    Tensor x = rnd({2, 3, 4, 5}, rng);
    std::vector<Tensor*> inputs{&x};
    add_params(inputs, params.parameters(""));
    return probe(inputs, [&] { return dwfc_kernel_forward(x, params, dil, pad); },
                 [&](const Tensor& g) {
                   KernelReweightCache cache;
                   dwfc_kernel_forward(x, params, dil, pad, &cache);
                   x.accumulate_grad(dwfc_kernel_backward(cache, params, dil, pad, g));
                 },
                 rng, fault);
  });
  check("grad.se", [&](CounterRng& rng, std::size_t, bool fault) {
    SEParams params = SEParams::init(8, 4, rng);
    Tensor x = rnd({2, 8, 4, 4}, rng);
    std::vector<Tensor*> inputs{&x};
    add_params(inputs, params.parameters(""));
    return probe(inputs, [&] { return se_forward(x, params); },
                 [&](const Tensor& g) {
                   SECache cache;
                   se_forward(x, params, &cache);
                   x.accumulate_grad(se_backward(cache, params, g));
                 },
                 rng, fault);
  });
  for (HeadKind kind : {HeadKind::cac, HeadKind::fixed, HeadKind::gap, HeadKind::dwfc, HeadKind::se}) {
    check(std::string("grad.head_loss.") + std::string(to_string(kind)),
          [kind](CounterRng& rng, std::size_t, bool fault) { return head_loss_error(kind, rng, fault); });
  }
  check("grad.model_loss", [](CounterRng& rng, std::size_t, bool fault) { return model_loss_error(rng, fault); });
  return out;
}

// -- invariants ---------------------------------------------------------------

std::vector<CheckResult> run_invariants(const Options& opts) {
  std::vector<CheckResult> out;
  const std::size_t n_inst = std::max<std::size_t>(opts.instances, 1);

  {
    // Weight range, contraction and spatial variation of CaC against SE.
    double outside = 0.0, expanded = 0.0, se_std = 0.0;
    double cac_std = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_inst; ++i) {
      CounterRng rng = rng_for(opts, "inv.weights", i);
      CaCConfig cfg;
      cfg.channels = 8;
      const CaCParams params = random_cac(cfg, rng);
      const Tensor x = rnd({2, 8, 6, 6}, rng, 3.0);
      CaCCache cache;
      const Tensor y = cac_forward(x, params, cfg, &cache);
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double w = cache.weights[k];
        if (!(w > 0.0 && w < 1.0)) outside += 1;
        if (x[k] != 0.0 && !(std::abs(y[k]) < std::abs(x[k]))) expanded += 1;
      }
      double best = 0.0;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t j = 0; j < 8; ++j) best = std::max(best, spatial_std(cache.weights, n, j));
      cac_std = std::min(cac_std, best);

      const SEParams se = SEParams::init(8, 4, rng);
      const Tensor sw = se_weight_map(x, se);
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t j = 0; j < 8; ++j) se_std = std::max(se_std, spatial_std(sw, n, j));
    }
    out.push_back(exactly_zero("inv.weight_map_open_unit_interval", outside));
    out.push_back(exactly_zero("inv.cac_contraction", expanded));
    out.push_back(exactly_zero("inv.se_spatial_std", se_std));
    out.push_back({"inv.cac_spatial_std", cac_std > 1e-3, cac_std, 1e-3});
  }
  {
    double perm = 0.0, shift = 0.0;
    for (std::size_t i = 0; i < n_inst; ++i) {
      CounterRng rng = rng_for(opts, "inv.symmetry", i);
      CaCConfig cfg;
      cfg.channels = 1 + rng.below(8);
      cfg.kernel_size = rng.below(2) ? 5 : 3;
      const std::size_t h = 2 + rng.below(6), w = 2 + rng.below(6), c = cfg.channels;
      const CaCParams params = random_cac(cfg, rng);
      const Tensor x = rnd({1, c, h, w}, rng);

      std::vector<std::size_t> order(h * w);
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
      Tensor xp(x.shape());
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t p = 0; p < h * w; ++p) xp[j * h * w + p] = x[j * h * w + order[p]];
      KernelPredictionTrace ta, tb;
      predict_cac_kernels(x, params, cfg, &ta);
      predict_cac_kernels(xp, params, cfg, &tb);
      perm = std::max(perm, max_rel_diff(tb.raw, ta.raw));

      cfg.padding = PaddingMode::circular;
      const std::size_t dy = rng.below(h), dx = rng.below(w);
      auto roll = [&](const Tensor& t) {
        Tensor r(t.shape());
        for (std::size_t j = 0; j < c; ++j)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t q = 0; q < w; ++q) r.at(0, j, (y + dy) % h, (q + dx) % w) = t.at(0, j, y, q);
        return r;
      };
      shift = std::max(shift, max_rel_diff(cac_forward(roll(x), params, cfg), roll(cac_forward(x, params, cfg))));
    }
    out.push_back(below("inv.kernel_permutation_invariance", perm, 1e-10));
    out.push_back(below("inv.circular_translation_equivariance", shift, 1e-9));
  }
  {
    // Constant input: the raw kernel matrix is n * q k^T.
    double err = 0.0;
    for (std::size_t i = 0; i < n_inst; ++i) {
      CounterRng rng = rng_for(opts, "inv.constant_rank1", i);
      CaCConfig cfg;
      cfg.channels = 1 + rng.below(6);
      const std::size_t c = cfg.channels, h = 1 + rng.below(5), w = 1 + rng.below(5), t = cfg.taps();
      const CaCParams params = random_cac(cfg, rng);
      const Tensor v = rnd({c}, rng);
      Tensor x({1, c, h, w});
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t p = 0; p < h * w; ++p) x[j * h * w + p] = v[j];
      KernelPredictionTrace trace;
      predict_cac_kernels(x, params, cfg, &trace);
      Tensor expect({1, t, c});
      for (std::size_t a = 0; a < t; ++a)
        for (std::size_t b = 0; b < c; ++b) {
          double q = 0.0, k = 0.0;
          for (std::size_t m = 0; m < c; ++m) {
            q += params.query_weight.at(a, m) * v[m];
            k += params.key_weight.at(b, m) * v[m];
          }
          expect[a * c + b] = static_cast<double>(h * w) * q * k;
        }
      err = std::max(err, max_rel_diff(trace.raw.reshaped(expect.shape()), expect));
    }
    out.push_back(below("inv.constant_input_rank_one", err, 1e-12));
  }
  {
    // Shape contracts across kinds and sizes.
    double violations = 0.0;
    for (std::size_t i = 0; i < n_inst; ++i) {
      CounterRng rng = rng_for(opts, "inv.shapes", i);
      HeadConfig cfg;
      cfg.kind = static_cast<HeadKind>(i % 5);
      cfg.cac.channels = 4 * (1 + rng.below(3));
      cfg.cac.heads = 1 + rng.below(3);
      cfg.num_classes = 2 + rng.below(3);
      const std::size_t n = 1 + rng.below(2), h = 1 + rng.below(6), w = 1 + rng.below(6);
      cfg.feature_height = h;
      cfg.feature_width = w;
      const SegHead head = SegHead::init(cfg, rng);
      const Tensor x = rnd({n, cfg.cac.channels, h, w}, rng);
      HeadCache cache;
      const Tensor logits = head_forward(x, head, cfg, &cache);
      if (logits.shape() != Shape{n, cfg.num_classes, h, w}) violations += 1;
      if (cache.features.dim(1) != (cfg.cac.heads + 1) * cfg.cac.channels) violations += 1;
      for (const auto& m : head.modules) {
        if (module_forward(m, cfg, x).shape() != x.shape()) violations += 1;
        if (module_weight_map(m, cfg, x).shape() != x.shape()) violations += 1;
      }
    }
    out.push_back(exactly_zero("inv.shape_contracts", violations));
  }
  {
    // Identical module parameters give identical channel blocks.
    CounterRng rng = rng_for(opts, "inv.duplicate_heads", 0);
    HeadConfig cfg;
    cfg.cac.channels = 8;
    cfg.cac.heads = 2;
    SegHead head = SegHead::init(cfg, rng);
    head.modules[1] = head.modules[0];
    const Tensor x = rnd({1, 8, 6, 6}, rng);
    HeadCache cache;
    head_forward(x, head, cfg, &cache);
    const std::vector<std::size_t> sizes{8, 8, 8};
    const auto blocks = ops::split_channels(cache.features, sizes);
    out.push_back(exactly_zero("inv.duplicate_heads_identical", max_abs_diff(blocks[0], blocks[1])));
  }
  {
    // Parameter accounting, formula and materialized.
    double mismatches = 0.0;
    for (std::uint64_t c : {8ULL, 64ULL, 512ULL}) {
      const std::uint64_t s = 3;
      if (param_count::cac_projection(c, s) != c * c + s * s * c) mismatches += 1;
      if (param_count::fixed(c, s) != s * s * c) mismatches += 1;
      if (param_count::gap(c, s) != s * s * c * c) mismatches += 1;
      if (param_count::dwfc(c, s, 16, 16) != 16 * 16 * s * s * c) mismatches += 1;
      if (param_count::full_fc(c, s) != s * s * c * c * c) mismatches += 1;
      CounterRng rng = rng_for(opts, "inv.param_counts", c);
      CaCConfig cfg;
      cfg.channels = c;
      const CaCParams p = CaCParams::init(cfg, rng);
      if (p.projection_parameter_count() != param_count::cac_projection(c, s)) mismatches += 1;
      if (p.parameter_count() != param_count::cac_projection(c, s) + 2 * c) mismatches += 1;
      if (FixedKernelParams::init(c, s, rng).parameter_count() != param_count::fixed(c, s)) mismatches += 1;
      if (GapKernelParams::init(c, s, rng).parameter_count() != param_count::gap(c, s)) mismatches += 1;
      if (DwFcKernelParams::init(c, s, 16, 16, rng).parameter_count() != param_count::dwfc(c, s, 16, 16)) {
        mismatches += 1;
      }
    }
    if (param_count::cac_projection(512, 3) != 266752) mismatches += 1;
    const std::uint64_t c = 64, s = 3;
    const bool ordered = param_count::fixed(c, s) < param_count::cac_projection(c, s) &&
                         param_count::cac_projection(c, s) < param_count::gap(c, s) &&
                         param_count::gap(c, s) < param_count::dwfc(c, s, 16, 16);
    if (!ordered) mismatches += 1;
    out.push_back(exactly_zero("inv.parameter_accounting", mismatches));
  }
  {
    // Schedule and optimizer contracts.
    TrainConfig tc;
    tc.initial_lr = 0.05;
    tc.total_iters = 100;
    double bad = 0.0;
    if (poly_lr(0, tc) != tc.initial_lr) bad += 1;
    if (poly_lr(tc.total_iters, tc) != 0.0) bad += 1;
    for (std::size_t it = 1; it <= tc.total_iters; ++it)
      if (poly_lr(it, tc) > poly_lr(it - 1, tc)) bad += 1;
    out.push_back(exactly_zero("inv.poly_lr_contract", bad));

    CounterRng rng = rng_for(opts, "inv.sgd", 0);
    TrainConfig plain = tc;
    plain.momentum = 0.0;
    plain.weight_decay = 0.0;
    Tensor p = rnd({4, 3}, rng);
    Tensor expect = p;
    OptimizerState state;
    double diff = 0.0;
    for (int step = 0; step < 3; ++step) {
      Tensor g = rnd({4, 3}, rng);
      p.zero_grad();
      p.accumulate_grad(g);
      std::vector<ParamRef> refs{{"p", &p}};
      sgd_step(refs, state, 0.1, plain);
      for (std::size_t k = 0; k < expect.size(); ++k) expect[k] -= 0.1 * g[k];
    }
    for (std::size_t k = 0; k < p.size(); ++k) diff += p[k] != expect[k] ? 1.0 : 0.0;
    out.push_back(exactly_zero("inv.sgd_vanilla_reduction", diff));

    TrainConfig decay = tc;
    decay.weight_decay = 0.1;
    Tensor q = rnd({5}, rng);
    const Tensor before = q;
    q.zero_grad();
    OptimizerState s2;
    std::vector<ParamRef> refs{{"q", &q}};
    sgd_step(refs, s2, 0.1, decay);
    double grown = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k)
      if (before[k] != 0.0 && !(std::abs(q[k]) < std::abs(before[k]))) grown += 1;
    out.push_back(exactly_zero("inv.weight_decay_shrinks", grown));
  }
  {
    // Metric range and label-permutation equivariance.
    double bad = 0.0;
    for (std::size_t i = 0; i < n_inst; ++i) {
      CounterRng rng = rng_for(opts, "inv.metrics", i);
      const std::size_t k = 2 + rng.below(4);
      const LabelMap truth = rnd_labels(1, 6, 6, k, rng), pred = rnd_labels(1, 6, 6, k, rng);
      std::vector<std::int32_t> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t m = k; m > 1; --m) std::swap(perm[m - 1], perm[rng.below(m)]);
      LabelMap tp = truth, pp = pred;
      for (auto& v : tp.values) v = perm[static_cast<std::size_t>(v)];
      for (auto& v : pp.values) v = perm[static_cast<std::size_t>(v)];
      ConfusionMatrix a(k), b(k), d(k);
      a.accumulate(pred, truth);
      b.accumulate(pp, tp);
      d.accumulate(truth, truth);
      if (pix_acc(a) != pix_acc(b) || std::abs(mean_iou(a) - mean_iou(b)) > 1e-15) bad += 1;
      if (pix_acc(a) < 0 || pix_acc(a) > 1 || mean_iou(a) < 0 || mean_iou(a) > 1) bad += 1;
      if (pix_acc(d) != 1.0 || mean_iou(d) != 1.0) bad += 1;
    }
    out.push_back(exactly_zero("inv.metric_properties", bad));
  }
  return out;
}

std::vector<CheckResult> run_suite(std::string_view suite, const Options& opts) {
  if (suite == "oracles") return run_oracles(opts);
  if (suite == "grads") return run_grads(opts);
  if (suite == "invariants") return run_invariants(opts);
  if (suite == "all") {
    auto all = run_oracles(opts);
    for (auto* f : {&run_grads, &run_invariants}) {
      auto part = (*f)(opts);
      all.insert(all.end(), part.begin(), part.end());
    }
    return all;
  }
  throw ConfigError("unknown suite '" + std::string(suite) + "' (expected oracles, grads, invariants or all)");
}

std::string format_result(const CheckResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %s %.6e %.1e", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.value, r.tolerance);
  return buf;
}

bool report(std::ostream& out, const std::vector<CheckResult>& results) {
  bool ok = true;
  for (const auto& r : results) {
    out << format_result(r) << '\n';
    ok = ok && r.passed;
  }
  return ok;
}

}  // namespace cac::verify
