// SPDX-License-Identifier: Apache-2.0
#include "cac/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>
#include <thread>
#include <utility>

#include "cac/errors.hpp"
#include "cac/ops.hpp"

namespace cac {

void TrainConfig::validate() const {
  std::string problems;
  auto fail = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
  if (!(initial_lr > 0.0)) fail("train.initial_lr must be > 0");
  if (!(power > 0.0 && power <= 1.0)) fail("train.power must lie in (0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("train.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("train.weight_decay must be >= 0");
  if (!(aux_weight >= 0.0)) fail("train.aux_weight must be >= 0");
  if (batch_size == 0) fail("train.batch_size must be positive");
  if (!problems.empty()) throw ConfigError("invalid training configuration: " + problems);
}

double poly_lr(std::size_t iter, const TrainConfig& cfg) {
  if (iter > cfg.total_iters) {
    throw ScheduleError("poly_lr: iteration " + std::to_string(iter) + " beyond total " +
                        std::to_string(cfg.total_iters));
  }
  if (iter == cfg.total_iters) return 0.0;
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.total_iters);
  return cfg.initial_lr * std::pow(frac, cfg.power);
}

void sgd_step(std::span<const ParamRef> params, OptimizerState& state, double lr, const TrainConfig& cfg) {
  for (const auto& p : params) {
    const auto g = std::as_const(*p.tensor).grad();
    if (g.size() != p.tensor->size()) continue;
    for (double v : g) {
      if (!std::isfinite(v)) throw NumericError("sgd_step: non-finite gradient for parameter '" + p.name + "'");
    }
  }
  if (state.velocity.size() != params.size()) state.velocity.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& param = *params[i].tensor;
    Tensor& vel = state.velocity[i];
    if (vel.shape() != param.shape()) vel = Tensor(param.shape());
    const auto g = std::as_const(param).grad();
    const bool has = g.size() == param.size();
    for (std::size_t k = 0; k < param.size(); ++k) {
      const double grad = (has ? g[k] : 0.0) + cfg.weight_decay * param[k];
      vel[k] = cfg.momentum * vel[k] + grad;
      param[k] -= lr * vel[k];
    }
  }
}

StepResult train_step(SegmentationModel& model, const Batch& batch, const TrainConfig& cfg, OptimizerState& state) {
  auto params = model.trainable_parameters();
  for (auto& p : params) p.tensor->zero_grad();

  ModelCache cache;
  ModelOutput out = batch.features ? model.forward_features(*batch.features, &cache) : model.forward(batch.images, &cache);
  auto main = ops::softmax_cross_entropy(out.logits, batch.labels);
  auto aux = ops::softmax_cross_entropy(out.aux_logits, batch.labels);
  model.backward(cache, main.grad, ops::scale(aux.grad, cfg.aux_weight));

  StepResult r;
  r.main_loss = main.loss;
  r.aux_loss = aux.loss;
  r.loss = main.loss + cfg.aux_weight * aux.loss;
  r.lr = poly_lr(state.iteration, cfg);
  sgd_step(params, state, r.lr, cfg);
  ++state.iteration;
  return r;
}

// -- sampling -----------------------------------------------------------------

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), order_(dataset_size), rng_(derive_key(seed, 0xBA7C4ULL)) {
  if (dataset_size == 0) throw ConfigError("cannot sample batches from an empty dataset");
  for (std::size_t i = 0; i < dataset_size; ++i) order_[i] = i;
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out;
  out.reserve(batch_size_);
  while (out.size() < batch_size_) {
    if (cursor_ == order_.size()) reshuffle();
    out.push_back(order_[cursor_++]);
  }
  return out;
}

// -- evaluation ---------------------------------------------------------------

Metrics metrics_from(const ConfusionMatrix& conf) {
  Metrics m;
  m.pix_acc = pix_acc(conf);
  m.mean_iou = mean_iou(conf);
  for (std::size_t k = 0; k < conf.num_classes(); ++k) m.class_iou.push_back(class_iou(conf, k));
  return m;
}

Tensor predict_logits(const SegmentationModel& model, const Tensor& image, bool flip) {
  const Tensor batch = image.rank() == 4 ? image : image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  Tensor logits = model.forward(batch).logits;
  if (!flip) return logits;
  const Tensor mirrored = ops::flip_horizontal(model.forward(ops::flip_horizontal(batch)).logits);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = 0.5 * (logits[i] + mirrored[i]);
  return logits;
}

ConfusionMatrix evaluate_confusion(const SegmentationModel& model, std::span<const SegSample> samples, bool flip,
                                   std::size_t threads) {
  const std::size_t k = model.config().head.num_classes;
  auto run = [&](std::size_t begin, std::size_t stride, ConfusionMatrix& conf) {
    for (std::size_t i = begin; i < samples.size(); i += stride) {
      conf.accumulate(ops::argmax_channels(predict_logits(model, samples[i].image, flip)), samples[i].labels);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, samples.size()));
  ConfusionMatrix total(k);
  if (threads == 1) {
    run(0, 1, total);
    return total;
  }
  std::vector<ConfusionMatrix> parts(threads, ConfusionMatrix(k));
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      try {
        run(t, threads, parts[t]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& p : parts) total.merge(p);
  return total;
}

Metrics evaluate(const SegmentationModel& model, std::span<const SegSample> samples, bool flip, std::size_t threads) {
  return metrics_from(evaluate_confusion(model, samples, flip, threads));
}

}  // namespace cac
