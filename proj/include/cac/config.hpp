// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration as flat "section.key = value" text. Lines starting
// with '#' and blank lines are ignored. Recognized keys:
//
//   seed                      run seed (required before training)
//   output_dir                directory for records, CSV and checkpoints
//   head.kind                 cac | fixed | gap | dwfc | se
//   head.global_pool          true | false
//   cac.s                     kernel size (odd)
//   cac.dilations             comma list, strictly increasing, e.g. 1,2,3
//   cac.heads                 number of parallel re-weighting modules H
//   cac.padding               zero | circular
//   cac.projection_bias       true | false
//   cac.batch_mode            per_item | batch_mean
//   cac.norm_eps              kernel standardization epsilon
//   se.reduction              SE bottleneck ratio r
//   backbone.kind             identity | shallow
//   backbone.channels, backbone.depth, backbone.stride, backbone.freeze,
//   backbone.standardize
//   train.initial_lr, train.power, train.total_iters, train.momentum,
//   train.weight_decay, train.aux_weight, train.batch_size
//   data.train_count, data.eval_count, data.height, data.width,
//   data.num_classes, data.texture_noise, data.blob_count_min,
//   data.blob_count_max, data.blob_size_min, data.blob_size_max
//   eval.flip                 true | false

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cac/data.hpp"
#include "cac/head.hpp"
#include "cac/model.hpp"
#include "cac/training.hpp"

namespace cac {

struct ExperimentConfig {
  std::optional<std::uint64_t> seed;
  std::string output_dir = "runs";
  HeadKind head_kind = HeadKind::cac;
  bool global_pool = true;
  CaCConfig cac;  // channels are derived from the backbone
  std::size_t se_reduction = 4;
  BackboneConfig backbone;
  TrainConfig train;
  DatasetSpec data;  // data.count is the training-set size; data.seed follows `seed`
  std::size_t eval_count = 32;
  bool eval_flip = false;

  std::uint64_t require_seed() const;
  ModelConfig model_config() const;
  DatasetSpec train_spec() const;
  /// Evaluation samples continue the training stream at index data.count.
  DatasetSpec eval_spec() const;

  /// Every violated constraint across all sections; empty when valid.
  std::vector<std::string> validation_errors() const;
  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Throws ConfigError listing every malformed line.
ExperimentConfig parse_config(std::string_view text);
std::string format_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies one "key = value" assignment; throws ConfigError on unknown keys or
/// unparsable values.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

}  // namespace cac
