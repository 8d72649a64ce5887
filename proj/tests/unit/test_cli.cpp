// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cac/config.hpp"
#include "cac/errors.hpp"
#include "cac/experiment.hpp"
#include "cac/rng.hpp"
#include "cac/serialization.hpp"
#include "cac/verify.hpp"

using namespace cac;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status;
  std::string out;
};

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cac_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Run cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "stdout.txt";
  const std::string cmd = std::string(CAC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig random_config(std::uint64_t seed) {
  CounterRng rng(derive_key(seed, 41));
  ExperimentConfig c;
  c.seed = rng.next_u64();
  c.output_dir = "runs/r" + std::to_string(rng.below(1000));
  c.head_kind = static_cast<HeadKind>(rng.below(5));
  c.global_pool = rng.below(2) == 1;
  c.cac.kernel_size = rng.below(2) ? 5 : 3;
  c.cac.dilations = rng.below(2) ? std::vector<std::size_t>{1, 2, 3} : std::vector<std::size_t>{1 + rng.below(4)};
  c.cac.heads = 1 + rng.below(3);
  c.cac.padding = rng.below(2) ? PaddingMode::circular : PaddingMode::zero;
  c.cac.use_projection_bias = rng.below(2) == 1;
  c.cac.batch_mode = rng.below(2) ? KernelBatchMode::batch_mean : KernelBatchMode::per_item;
  c.cac.norm_eps = rng.uniform(1e-6, 1e-3);
  c.backbone.channels = 4 * (1 + rng.below(4));
  c.backbone.freeze = rng.below(2) == 1;
  c.train.initial_lr = rng.uniform(1e-3, 1.0);
  c.train.power = rng.uniform(0.5, 1.0);
  c.train.total_iters = rng.below(5000);
  c.train.momentum = rng.uniform();
  c.train.weight_decay = rng.uniform(0.0, 1e-3);
  c.train.aux_weight = rng.uniform();
  c.train.batch_size = 1 + rng.below(16);
  c.data.count = 1 + rng.below(100);
  c.eval_count = 1 + rng.below(50);
  c.data.texture_noise = rng.uniform(0.0, 0.2);
  c.eval_flip = rng.below(2) == 1;
  return c;
}

}  // namespace

TEST_CASE("config print/parse round trip on randomized configs") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const ExperimentConfig c = random_config(s);
    CHECK(parse_config(format_config(c)) == c);
  }
}

TEST_CASE("config parsing reports every malformed line") {
  const std::string text =
      "# comment\n"
      "seed = 3\n"
      "\n"
      "cac.s = three\n"
      "no equals sign\n"
      "unknown.key = 1\n"
      "head.kind = cac\n";
  try {
    parse_config(text);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 4") != std::string::npos);
    CHECK(msg.find("line 5") != std::string::npos);
    CHECK(msg.find("line 6") != std::string::npos);
    CHECK(msg.find("line 7") == std::string::npos);
  }
}

TEST_CASE("validation lists every violated field, including a missing seed") {
  ExperimentConfig c;
  c.train.initial_lr = -1.0;
  c.cac.kernel_size = 4;
  c.data.num_classes = 1;
  const auto errors = c.validation_errors();
  std::string all;
  for (const auto& e : errors) all += e + "\n";
  CHECK(all.find("seed") != std::string::npos);
  CHECK(all.find("initial_lr") != std::string::npos);
  CHECK(all.find("cac.s") != std::string::npos);
  CHECK(all.find("num_classes") != std::string::npos);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(c.require_seed(), ConfigError);
}

TEST_CASE("parameter table rows") {
  const auto cac = parameter_table(HeadKind::cac, 512, 3, 16, 16, 1, 4);
  CHECK(cac.front().component == "cac.projections");
  CHECK(cac.front().count == 266752);
  CHECK(cac.back().count == 9ULL * 512 * 512 * 512);
  const auto gap = parameter_table(HeadKind::gap, 512, 3, 16, 16, 1, 4);
  CHECK(gap.front().count == 2359296);
  const auto fixed = parameter_table(HeadKind::fixed, 8, 3, 16, 16, 2, 4);
  CHECK(fixed.front().count == 72);
  bool has_modules = false;
  for (const auto& r : fixed)
    if (r.component == "modules") has_modules = r.count == 144;
  CHECK(has_modules);
  CHECK_THROWS_AS(parameter_table(HeadKind::se, 6, 3, 16, 16, 1, 4), ConfigError);
  CHECK_THROWS_AS(parameter_table(HeadKind::cac, 8, 4, 16, 16, 1, 4), ConfigError);
}

TEST_CASE("metrics CSV is parsed back by its own reader") {
  const fs::path dir = scratch("csv");
  RunRecord rec;
  rec.config.head_kind = HeadKind::se;
  rec.seed = 9;
  rec.metrics.pix_acc = 0.8125;
  rec.metrics.mean_iou = 0.5;
  rec.params.trainable = 1234;
  rec.steps.resize(7);
  rec.seconds = 1.5;
  append_csv(dir / "m.csv", rec);
  append_csv(dir / "m.csv", rec);
  const auto rows = read_csv(dir / "m.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].head_kind == "se");
  CHECK(rows[0].seed == 9);
  CHECK(rows[0].pix_acc == 0.8125);
  CHECK(rows[0].params == 1234);
  CHECK(rows[1].iters == 7);
  CHECK(slurp(dir / "m.csv").rfind(std::string(kCsvHeader) + "\n", 0) == 0);

  std::ofstream(dir / "bad.csv") << "a,b,c\n1,2,3\n";
  CHECK_THROWS_AS(read_csv(dir / "bad.csv"), DataError);
}

TEST_CASE("verify: a corrupted gradient yields a FAIL line naming the check") {
  verify::Options opts;
  opts.grad_seeds = 1;
  opts.inject_gradient_fault = "grad.reweight";
  const auto results = verify::run_grads(opts);
  bool found = false;
  for (const auto& r : results) {
    if (r.name == "grad.reweight") {
      found = true;
      CHECK_FALSE(r.passed);
      CHECK(verify::format_result(r).rfind("FAIL grad.reweight ", 0) == 0);
    } else {
      CHECK(r.passed);
    }
  }
  CHECK(found);
  std::ostringstream sink;
  CHECK_FALSE(verify::report(sink, results));
  CHECK_THROWS_AS(verify::run_suite("nope", opts), ConfigError);
}

TEST_CASE("cli: gen-data sizes, regeneration and the empty dataset") {
  const fs::path dir = scratch("gen");
  const std::string common = "--seed 4 --set data.height=8 --set data.width=8 --set data.blob_size_min=2 "
                             "--set data.blob_size_max=4 --set data.train_count=1 --set data.eval_count=2";
  REQUIRE(cli("gen-data " + common + " --out " + (dir / "a").string(), dir).status == 0);
  REQUIRE(cli("gen-data " + common + " --out " + (dir / "b").string(), dir).status == 0);
  CHECK(fs::file_size(dir / "a" / "train.cacd") == 22 + 1536 + 128);
  CHECK(fs::file_size(dir / "a" / "eval.cacd") == 22 + 2 * (1536 + 128));
  CHECK(slurp(dir / "a" / "train.cacd") == slurp(dir / "b" / "train.cacd"));

  REQUIRE(cli("gen-data " + common + " --set data.train_count=0 --out " + (dir / "z").string(), dir).status == 0);
  CHECK(fs::file_size(dir / "z" / "train.cacd") == kDatasetHeaderBytes);
  CHECK(read_dataset(dir / "z" / "train.cacd").samples.empty());
}

TEST_CASE("cli: commands refuse to run without a seed") {
  const fs::path dir = scratch("noseed");
  const Run r = cli("train --out " + dir.string(), dir);
  CHECK(r.status != 0);
  CHECK(r.out.find("seed") != std::string::npos);
}

TEST_CASE("cli: train writes record, CSV and checkpoint; eval reloads the checkpoint") {
  const fs::path dir = scratch("train");
  std::ofstream(dir / "run.cfg") << "seed = 11\nhead.kind = cac\ntrain.total_iters = 6\ntrain.batch_size = 4\n"
                                    "data.train_count = 8\ndata.eval_count = 3\n";
  const std::string base = "--config " + (dir / "run.cfg").string() + " --out " + dir.string();
  const Run t = cli("train " + base, dir);
  REQUIRE(t.status == 0);
  CHECK(fs::exists(dir / "cac_seed11.cacp"));
  const auto rows = read_csv(dir / "metrics.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].iters == 6);

  std::ifstream record(dir / "cac_seed11.jsonl");
  std::string line;
  std::size_t iters = 0;
  std::string first, last;
  while (std::getline(record, line)) {
    if (first.empty()) first = line;
    last = line;
    iters += line.find("\"type\":\"iter\"") != std::string::npos;
  }
  CHECK(iters == 6);
  CHECK(first.find("\"type\":\"config\"") != std::string::npos);
  CHECK(last.find("\"type\":\"summary\"") != std::string::npos);

  const Run e = cli("eval " + base + " --flip off", dir);
  REQUIRE(e.status == 0);
  // The reloaded checkpoint reproduces the metrics of the trained model.
  const auto metrics = nlohmann::json::parse(e.out);
  CHECK(metrics["mIoU"].get<double>() == rows[0].mean_iou);
  CHECK(metrics["pixAcc"].get<double>() == rows[0].pix_acc);
  CHECK(cli("eval " + base + " --flip on", dir).status == 0);
  CHECK(cli("eval " + base + " --flip sideways", dir).status != 0);
}

TEST_CASE("cli: verify exit status and params output") {
  const fs::path dir = scratch("verify");
  const Run ok = cli("verify --suite invariants", dir);
  CHECK(ok.status == 0);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  const Run bad = cli("verify --suite grads --inject-fault grad.sigmoid", dir);
  CHECK(bad.status != 0);
  CHECK(bad.out.find("FAIL grad.sigmoid ") != std::string::npos);

  const Run p = cli("params --kind cac --c 512 --s 3", dir);
  CHECK(p.status == 0);
  CHECK(p.out.find("cac.projections,266752,") != std::string::npos);
  CHECK(cli("params --kind se --c 6", dir).status != 0);
}
