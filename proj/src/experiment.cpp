// SPDX-License-Identifier: Apache-2.0
#include "cac/experiment.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cac/baselines.hpp"
#include "cac/errors.hpp"
#include "cac/ops.hpp"
#include "cac/rng.hpp"

namespace cac {
namespace {

using nlohmann::json;

constexpr std::uint64_t kInitStream = 0x1A17'0000'0001ULL;

std::string real_str(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

json optional_list(const std::vector<std::optional<double>>& v) {
  json arr = json::array();
  for (const auto& x : v) arr.push_back(x ? json(*x) : json(nullptr));
  return arr;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_field(const std::string& s, const char* column) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError(std::string("metrics CSV: bad value '") + s + "' in column " + column);
  }
  return v;
}

Tensor drop_batch_axis(const Tensor& t) {
  return t.reshaped(Shape(t.shape().begin() + 1, t.shape().end()));
}

}  // namespace

ParameterCounts count_parameters(const SegmentationModel& model) {
  ParameterCounts p;
  p.backbone = model.backbone_parameter_count();
  p.reweight = model.head().reweight_parameter_count();
  p.classifier = model.head().classifier_parameter_count();
  p.aux = model.aux_parameter_count();
  const auto& bb = model.config().backbone;
  const bool backbone_trains = bb.kind == BackboneKind::shallow && !bb.freeze;
  p.trainable = p.reweight + p.classifier + p.aux + (backbone_trains ? p.backbone : 0);
  return p;
}

SegmentationModel build_model(const ExperimentConfig& cfg) {
  CounterRng rng(derive_key(cfg.require_seed(), kInitStream));
  return SegmentationModel::init(cfg.model_config(), rng);
}

Metrics evaluate_split(const SegmentationModel& model, const ExperimentConfig& cfg, std::size_t threads) {
  const auto samples = generate_context_dataset(cfg.eval_spec(), cfg.data.count);
  return evaluate(model, samples, cfg.eval_flip, threads);
}

RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& options, SegmentationModel* model_out) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();

  RunRecord rec;
  rec.config = cfg;
  rec.seed = cfg.require_seed();
  if (options.record) *options.record << record_line_config(cfg) << '\n' << std::flush;

  const auto train = generate_context_dataset(cfg.train_spec());
  SegmentationModel model = build_model(cfg);
  if (!train.empty()) {
    std::vector<const SegSample*> all;
    for (const auto& s : train) all.push_back(&s);
    model.calibrate_backbone(batch_images(all));
  }
  rec.params = count_parameters(model);

  TrainConfig tc = cfg.train;
  tc.seed = rec.seed;

  // A frozen backbone is a fixed function of the image, so its outputs are
  // computed once per sample.
  const auto& bb = cfg.backbone;
  const bool precompute = bb.kind == BackboneKind::identity || bb.freeze;
  std::vector<Tensor> feat, pen;
  if (precompute) {
    for (const auto& s : train) {
      const BackboneOutput out = model.backbone_forward(s.image.reshaped({1, s.image.dim(0), s.image.dim(1), s.image.dim(2)}));
      feat.push_back(drop_batch_axis(out.features));
      pen.push_back(drop_batch_axis(out.penultimate));
    }
  }

  OptimizerState state;
  BatchSampler sampler(train.size(), tc.batch_size, rec.seed);
  std::vector<const SegSample*> items;
  std::vector<Tensor> fb, pb;
  for (std::size_t it = 0; it < tc.total_iters; ++it) {
    const auto idx = sampler.next();
    items.clear();
    for (auto i : idx) items.push_back(&train[i]);
    Batch batch;
    batch.labels = batch_labels(items);
    if (precompute) {
      fb.clear();
      pb.clear();
      for (auto i : idx) {
        fb.push_back(feat[i]);
        pb.push_back(pen[i]);
      }
      batch.features = BackboneOutput{ops::stack(fb), ops::stack(pb)};
    } else {
      batch.images = batch_images(items);
    }
    const StepResult step = train_step(model, batch, tc, state);
    rec.steps.push_back(step);
    if (options.record) *options.record << record_line_step(it, step) << '\n';
  }
  if (options.record) *options.record << record_line_params(rec.params) << '\n' << std::flush;

  rec.metrics = evaluate_split(model, cfg, options.eval_threads);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (options.record) {
    *options.record << record_line_metrics(rec.metrics) << '\n' << record_line_summary(rec) << '\n' << std::flush;
  }
  if (model_out) *model_out = std::move(model);
  return rec;
}

// -- records ------------------------------------------------------------------

std::string record_line_config(const ExperimentConfig& cfg) {
  json kv = json::object();
  std::istringstream lines(format_config(cfg));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  json j{{"type", "config"}, {"config", kv}};
  if (cfg.seed) j["seed"] = *cfg.seed;
  return j.dump();
}

std::string record_line_step(std::size_t iter, const StepResult& step) {
  return json{{"type", "iter"},
              {"iter", iter},
              {"loss", step.loss},
              {"main_loss", step.main_loss},
              {"aux_loss", step.aux_loss},
              {"lr", step.lr}}
      .dump();
}

std::string record_line_params(const ParameterCounts& p) {
  return json{{"type", "params"},     {"backbone", p.backbone}, {"reweight", p.reweight},
              {"classifier", p.classifier}, {"aux", p.aux},     {"trainable", p.trainable}}
      .dump();
}

std::string record_line_metrics(const Metrics& m) {
  return json{{"type", "metrics"}, {"pixAcc", m.pix_acc}, {"mIoU", m.mean_iou}, {"class_iou", optional_list(m.class_iou)}}
      .dump();
}

std::string record_line_summary(const RunRecord& r) {
  return json{{"type", "summary"}, {"seed", r.seed}, {"iters", r.steps.size()}, {"seconds", r.seconds}}.dump();
}

// -- CSV ----------------------------------------------------------------------

std::string csv_row(const RunRecord& r) {
  std::ostringstream os;
  os << to_string(r.config.head_kind) << ',' << r.seed << ',' << real_str(r.metrics.pix_acc) << ','
     << real_str(r.metrics.mean_iou) << ',' << r.params.trainable << ',' << r.steps.size() << ','
     << real_str(r.seconds);
  return os.str();
}

void append_csv(const std::filesystem::path& path, const RunRecord& record) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to '" + path.string() + "'");
  if (fresh) out << kCsvHeader << '\n';
  out << csv_row(record) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw DataError("metrics CSV '" + path.string() + "': unexpected header '" + line + "'");
  }
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 7) throw DataError("metrics CSV: expected 7 columns, got " + std::to_string(f.size()));
    CsvRow r;
    r.head_kind = f[0];
    r.seed = parse_field<std::uint64_t>(f[1], "seed");
    r.pix_acc = parse_field<double>(f[2], "pixAcc");
    r.mean_iou = parse_field<double>(f[3], "mIoU");
    r.params = parse_field<std::size_t>(f[4], "params");
    r.iters = parse_field<std::size_t>(f[5], "iters");
    r.seconds = parse_field<double>(f[6], "seconds");
    rows.push_back(std::move(r));
  }
  return rows;
}

// -- parameter accounting -------------------------------------------------------

std::vector<ParamRow> parameter_table(HeadKind kind, std::uint64_t c, std::uint64_t s, std::uint64_t h,
                                      std::uint64_t w, std::uint64_t heads, std::uint64_t se_reduction) {
  std::string problems;
  auto fail = [&](const std::string& m) { problems += (problems.empty() ? "" : "; ") + m; };
  if (c == 0) fail("c must be positive");
  if (s == 0 || s % 2 == 0) fail("s must be odd and positive");
  if (heads == 0) fail("heads must be positive");
  if (kind == HeadKind::dwfc && (h == 0 || w == 0)) fail("dwfc needs positive h and w");
  if (kind == HeadKind::se && (se_reduction == 0 || c % se_reduction != 0 || c / se_reduction == 0)) {
    fail("se needs c divisible by the reduction ratio");
  }
  if (!problems.empty()) throw ConfigError("params: " + problems);

  std::vector<ParamRow> rows;
  std::uint64_t per_module = 0;
  switch (kind) {
    case HeadKind::cac:
      rows.push_back({"cac.projections", param_count::cac_projection(c, s), "c^2 + s^2*c"});
      rows.push_back({"cac.norm_affine", 2 * c, "2*c"});
      per_module = param_count::cac_total(c, s);
      break;
    case HeadKind::fixed:
      per_module = param_count::fixed(c, s);
      rows.push_back({"fixed.kernels", per_module, "s^2*c"});
      break;
    case HeadKind::gap:
      per_module = param_count::gap(c, s);
      rows.push_back({"gap.projection", per_module, "s^2*c^2"});
      break;
    case HeadKind::dwfc:
      per_module = param_count::dwfc(c, s, h, w);
      rows.push_back({"dwfc.weights", per_module, "h*w*s^2*c"});
      break;
    case HeadKind::se:
      per_module = param_count::se(c, se_reduction);
      rows.push_back({"se.fc", per_module, "2*c^2/r"});
      break;
  }
  rows.push_back({"module", per_module, "per re-weighting module"});
  rows.push_back({"modules", per_module * heads, "H * module"});
  rows.push_back({"full_fc_reference", param_count::full_fc(c, s), "s^2*c^3 (never materialized)"});
  return rows;
}

}  // namespace cac
