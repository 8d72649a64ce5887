// SPDX-License-Identifier: Apache-2.0
//
// Single-threaded deterministic training: SGD with plain momentum and L2
// weight decay under a per-iteration poly learning-rate schedule, with a
// weighted auxiliary loss on the penultimate backbone features.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cac/data.hpp"
#include "cac/metrics.hpp"
#include "cac/model.hpp"
#include "cac/rng.hpp"

namespace cac {

struct TrainConfig {
  double initial_lr = 1.0;  // selected on the toy task by mean mIoU over every head kind
  double power = 0.9;
  std::size_t total_iters = 2000;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double aux_weight = 0.2;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming every violated field.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// initial_lr * (1 - iter / total_iters)^power. Throws ScheduleError unless
/// 0 <= iter <= total_iters.
double poly_lr(std::size_t iter, const TrainConfig& cfg);

struct OptimizerState {
  std::vector<Tensor> velocity;  // one per parameter, lazily shaped
  std::size_t iteration = 0;
};

/// g' = g + wd * p;  v = momentum * v + g';  p = p - lr * v.
/// Gradients are read from each parameter's grad slot. Throws NumericError
/// naming the first parameter with a non-finite gradient, before any update.
void sgd_step(std::span<const ParamRef> params, OptimizerState& state, double lr, const TrainConfig& cfg);

struct Batch {
  Tensor images;                          // (n, 3, h, w); may be empty when features are given
  LabelMap labels;
  std::optional<BackboneOutput> features;  // precomputed by a frozen backbone
};

struct StepResult {
  double loss = 0.0;
  double main_loss = 0.0;
  double aux_loss = 0.0;
  double lr = 0.0;
};

/// One iteration: forward, main + aux_weight * aux cross-entropy, backward
/// and an SGD step at poly_lr(state.iteration). Advances state.iteration.
StepResult train_step(SegmentationModel& model, const Batch& batch, const TrainConfig& cfg, OptimizerState& state);

/// Deterministic epoch-shuffled batches drawn from a counter stream.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  void reshuffle();
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  CounterRng rng_;
};

struct Metrics {
  double pix_acc = 0.0;
  double mean_iou = 0.0;
  std::vector<std::optional<double>> class_iou;
};

Metrics metrics_from(const ConfusionMatrix& conf);

/// Full-resolution logits for one image (1, K, h, w); with `flip` the logits
/// of the horizontally flipped image are flipped back and averaged in.
Tensor predict_logits(const SegmentationModel& model, const Tensor& image, bool flip);

/// Confusion matrix over a dataset. `threads` > 1 fans out over samples; the
/// integer merge keeps the result identical to the single-threaded one.
ConfusionMatrix evaluate_confusion(const SegmentationModel& model, std::span<const SegSample> samples, bool flip,
                                   std::size_t threads = 1);
Metrics evaluate(const SegmentationModel& model, std::span<const SegSample> samples, bool flip,
                 std::size_t threads = 1);

}  // namespace cac
