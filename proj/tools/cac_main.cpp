// SPDX-License-Identifier: Apache-2.0
//
// cac: dataset generation, training, evaluation, verification and parameter
// accounting from the command line.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cac/config.hpp"
#include "cac/errors.hpp"
#include "cac/experiment.hpp"
#include "cac/serialization.hpp"
#include "cac/verify.hpp"

namespace fs = std::filesystem;

namespace {

std::size_t env_threads() {
  const char* v = std::getenv("CAC_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  std::size_t n = 0;
  const std::string s(v);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc() || p != s.data() + s.size() || n == 0) {
    throw cac::ConfigError("CAC_THREADS must be a positive integer, got '" + s + "'");
  }
  return n;
}

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "experiment config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "seed (overrides the config)");
  cmd->add_option("--out", a.out, "output directory (overrides output_dir)");
  cmd->add_option("--set", a.sets, "extra key=value assignment, repeatable");
}

cac::ExperimentConfig resolve(const CommonArgs& a) {
  cac::ExperimentConfig cfg = a.config_path.empty() ? cac::ExperimentConfig{} : cac::load_config(a.config_path);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw cac::ConfigError("--set expects key=value, got '" + s + "'");
    cac::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (a.seed) cfg.seed = *a.seed;
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (!cfg.seed) throw cac::ConfigError("no seed given: set `seed` in the config or pass --seed");
  return cfg;
}

std::string run_stem(const cac::ExperimentConfig& cfg) {
  return std::string(cac::to_string(cfg.head_kind)) + "_seed" + std::to_string(*cfg.seed);
}

int cmd_gen_data(const CommonArgs& a) {
  const cac::ExperimentConfig cfg = resolve(a);
  // Only the data sections matter here; an empty dataset is a valid file.
  cfg.train_spec().validate();
  fs::create_directories(cfg.output_dir);
  for (const auto& [name, spec] : {std::pair{"train", cfg.train_spec()}, std::pair{"eval", cfg.eval_spec()}}) {
    const std::size_t first = std::string_view(name) == "eval" ? cfg.data.count : 0;
    cac::DatasetFile file{spec.height, spec.width, spec.num_classes, cac::generate_context_dataset(spec, first)};
    const fs::path path = fs::path(cfg.output_dir) / (std::string(name) + ".cacd");
    cac::write_dataset(path, file);
    std::cout << path.string() << ' ' << file.samples.size() << " samples\n";
  }
  return 0;
}

int cmd_train(const CommonArgs& a) {
  const cac::ExperimentConfig cfg = resolve(a);
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  std::ofstream record(dir / (run_stem(cfg) + ".jsonl"));
  if (!record) throw cac::IoError("cannot write " + (dir / (run_stem(cfg) + ".jsonl")).string());

  cac::RunOptions opts;
  opts.eval_threads = env_threads();
  opts.record = &record;
  cac::SegmentationModel model = cac::build_model(cfg);
  const cac::RunRecord rec = cac::run_experiment(cfg, opts, &model);
  cac::append_csv(dir / "metrics.csv", rec);
  cac::write_checkpoint(dir / (run_stem(cfg) + ".cacp"), model.all_parameters());
  std::cout << cac::kCsvHeader << '\n' << cac::csv_row(rec) << '\n';
  return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& flip, const std::string& checkpoint) {
  cac::ExperimentConfig cfg = resolve(a);
  if (flip == "on") cfg.eval_flip = true;
  if (flip == "off") cfg.eval_flip = false;
  cfg.validate();
  const fs::path ckpt = checkpoint.empty() ? fs::path(cfg.output_dir) / (run_stem(cfg) + ".cacp") : fs::path(checkpoint);
  cac::SegmentationModel model = cac::build_model(cfg);
  cac::read_checkpoint(ckpt, model.all_parameters());
  const cac::Metrics m = cac::evaluate_split(model, cfg, env_threads());
  std::cout << cac::record_line_metrics(m) << '\n';
  return 0;
}

int cmd_verify(const std::string& suite, const cac::verify::Options& opts) {
  const auto results = cac::verify::run_suite(suite, opts);
  const bool ok = cac::verify::report(std::cout, results);
  std::size_t failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << (ok ? "all " : "") << results.size() - failed << '/' << results.size() << " checks passed\n";
  return ok ? 0 : 1;
}

struct ParamsArgs {
  std::string kind = "cac";
  std::uint64_t c = 64, s = 3, h = 16, w = 16, heads = 1, reduction = 4;
  std::string dilations = "1,2,3";
};

int cmd_params(const ParamsArgs& p) {
  cac::ExperimentConfig probe;
  cac::apply_setting(probe, "head.kind", p.kind);
  cac::apply_setting(probe, "cac.dilations", p.dilations);
  const auto rows = cac::parameter_table(probe.head_kind, p.c, p.s, p.h, p.w, p.heads, p.reduction);
  std::cout << "component,count,formula\n";
  for (const auto& r : rows) std::cout << r.component << ',' << r.count << ',' << r.formula << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware feature re-weighting: toy segmentation experiments"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args;
  auto* gen = app.add_subcommand("gen-data", "write train.cacd and eval.cacd for a config");
  add_common(gen, gen_args);
  auto* train = app.add_subcommand("train", "train one head; writes a JSONL record, a CSV row and a checkpoint");
  add_common(train, train_args);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
  add_common(eval, eval_args);
  std::string flip, checkpoint;
  eval->add_option("--flip", flip, "horizontal-flip averaging")->check(CLI::IsMember({"on", "off"}));
  eval->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/<kind>_seed<N>.cacp)");

  auto* verify = app.add_subcommand("verify", "run self-verification suites");
  std::string suite = "all";
  cac::verify::Options vopts;
  verify->add_option("--suite", suite, "oracles | grads | invariants | all")
      ->check(CLI::IsMember({"oracles", "grads", "invariants", "all"}));
  verify->add_option("--seed", vopts.seed, "seed for the random instances");
  verify->add_option("--inject-fault", vopts.inject_gradient_fault,
                     "corrupt the analytic gradient of the named grads check");

  auto* params = app.add_subcommand("params", "print learnable-parameter counts per component");
  ParamsArgs pargs;
  params->add_option("--kind", pargs.kind, "cac | fixed | gap | dwfc | se");
  params->add_option("--c", pargs.c, "channels");
  params->add_option("--s", pargs.s, "kernel size");
  params->add_option("--height", pargs.h, "feature height (dwfc)");
  params->add_option("--width", pargs.w, "feature width (dwfc)");
  params->add_option("--heads", pargs.heads, "parallel modules H");
  params->add_option("--dilations", pargs.dilations, "comma list; shares the kernel, adds no parameters");
  params->add_option("--se-reduction", pargs.reduction, "SE bottleneck ratio");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(gen_args);
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_eval(eval_args, flip, checkpoint);
    if (*verify) return cmd_verify(suite, vopts);
    if (*params) return cmd_params(pargs);
  } catch (const cac::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
