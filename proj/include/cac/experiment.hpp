// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs: data generation, training, evaluation and the records a
// run leaves behind.
//
// Run record: one JSON object per line, written as training progresses.
//   {"type":"config", "seed":..., "config":{key: value, ...}}
//   {"type":"iter", "iter":i, "loss":..., "main_loss":..., "aux_loss":..., "lr":...}
//   {"type":"params", "backbone":..., "reweight":..., "classifier":..., "aux":..., "trainable":...}
//   {"type":"metrics", "pixAcc":..., "mIoU":..., "class_iou":[... or null]}
//   {"type":"summary", "seed":..., "iters":..., "seconds":...}
//
// Metrics CSV columns: head_kind,seed,pixAcc,mIoU,params,iters,seconds
// where params is the trainable parameter count of the run.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "cac/config.hpp"
#include "cac/model.hpp"
#include "cac/training.hpp"

namespace cac {

inline constexpr const char* kCsvHeader = "head_kind,seed,pixAcc,mIoU,params,iters,seconds";

struct ParameterCounts {
  std::size_t backbone = 0;
  std::size_t reweight = 0;
  std::size_t classifier = 0;
  std::size_t aux = 0;
  std::size_t trainable = 0;
};

ParameterCounts count_parameters(const SegmentationModel& model);

struct RunRecord {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::vector<StepResult> steps;
  Metrics metrics;
  ParameterCounts params;
  double seconds = 0.0;
};

/// Initial model for a config; the same seed yields the same backbone for
/// every head kind.
SegmentationModel build_model(const ExperimentConfig& cfg);

struct RunOptions {
  std::size_t eval_threads = 1;
  std::ostream* record = nullptr;  // JSON lines, streamed while training
};

/// Generates the data, trains for train.total_iters and evaluates on the
/// held-out split. `model_out` receives the trained model when non-null.
RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {},
                         SegmentationModel* model_out = nullptr);

/// Metrics of `model` on the held-out split of `cfg`.
Metrics evaluate_split(const SegmentationModel& model, const ExperimentConfig& cfg, std::size_t threads = 1);

std::string csv_row(const RunRecord& record);
/// Appends a row, writing the header first when the file is new or empty.
void append_csv(const std::filesystem::path& path, const RunRecord& record);

struct CsvRow {
  std::string head_kind;
  std::uint64_t seed = 0;
  double pix_acc = 0.0;
  double mean_iou = 0.0;
  std::size_t params = 0;
  std::size_t iters = 0;
  double seconds = 0.0;
};

/// Parses a metrics CSV written by append_csv; throws DataError on a schema
/// mismatch.
std::vector<CsvRow> read_csv(const std::filesystem::path& path);

std::string record_line_config(const ExperimentConfig& cfg);
std::string record_line_step(std::size_t iter, const StepResult& step);
std::string record_line_params(const ParameterCounts& counts);
std::string record_line_metrics(const Metrics& m);
std::string record_line_summary(const RunRecord& record);

struct ParamRow {
  std::string component;
  std::uint64_t count = 0;
  std::string formula;
};

/// Learnable-parameter accounting for one re-weighting head kind, followed by
/// the full-FC dynamic-filter reference count. Throws ConfigError on invalid
/// arguments.
std::vector<ParamRow> parameter_table(HeadKind kind, std::uint64_t c, std::uint64_t s, std::uint64_t h,
                                      std::uint64_t w, std::uint64_t heads, std::uint64_t se_reduction);

}  // namespace cac
