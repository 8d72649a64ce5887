// SPDX-License-Identifier: Apache-2.0
#include "cac/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "cac/errors.hpp"
#include "cac/rng.hpp"

namespace cac {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a real number, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_integer<std::size_t>(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError(std::string(key) + ": expected a comma-separated list");
  return out;
}

std::string real_str(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string bool_str(bool v) { return v ? "true" : "false"; }

std::string list_str(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Setting {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

#define CAC_SIZE(KEY, FIELD)                                                       \
  Setting {                                                                        \
    KEY, [](const ExperimentConfig& c) { return std::to_string(c.FIELD); },        \
        [](ExperimentConfig& c, std::string_view v) { c.FIELD = parse_integer<std::size_t>(KEY, v); } \
  }
#define CAC_REAL(KEY, FIELD)                                                       \
  Setting {                                                                        \
    KEY, [](const ExperimentConfig& c) { return real_str(c.FIELD); },              \
        [](ExperimentConfig& c, std::string_view v) { c.FIELD = parse_real(KEY, v); } \
  }
#define CAC_BOOL(KEY, FIELD)                                                       \
  Setting {                                                                        \
    KEY, [](const ExperimentConfig& c) { return bool_str(c.FIELD); },              \
        [](ExperimentConfig& c, std::string_view v) { c.FIELD = parse_bool(KEY, v); } \
  }

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table{
      {"seed",
       [](const ExperimentConfig& c) { return c.seed ? std::to_string(*c.seed) : std::string(); },
       [](ExperimentConfig& c, std::string_view v) { c.seed = parse_integer<std::uint64_t>("seed", v); }},
      {"output_dir", [](const ExperimentConfig& c) { return c.output_dir; },
       [](ExperimentConfig& c, std::string_view v) { c.output_dir = std::string(v); }},
      {"head.kind", [](const ExperimentConfig& c) { return std::string(to_string(c.head_kind)); },
       [](ExperimentConfig& c, std::string_view v) { c.head_kind = head_kind_from_string(v); }},
      CAC_BOOL("head.global_pool", global_pool),
      CAC_SIZE("cac.s", cac.kernel_size),
      {"cac.dilations", [](const ExperimentConfig& c) { return list_str(c.cac.dilations); },
       [](ExperimentConfig& c, std::string_view v) { c.cac.dilations = parse_list("cac.dilations", v); }},
      CAC_SIZE("cac.heads", cac.heads),
      {"cac.padding", [](const ExperimentConfig& c) { return std::string(to_string(c.cac.padding)); },
       [](ExperimentConfig& c, std::string_view v) { c.cac.padding = padding_from_string(v); }},
      CAC_BOOL("cac.projection_bias", cac.use_projection_bias),
      {"cac.batch_mode", [](const ExperimentConfig& c) { return std::string(to_string(c.cac.batch_mode)); },
       [](ExperimentConfig& c, std::string_view v) { c.cac.batch_mode = kernel_batch_mode_from_string(v); }},
      CAC_REAL("cac.norm_eps", cac.norm_eps),
      CAC_SIZE("se.reduction", se_reduction),
      {"backbone.kind", [](const ExperimentConfig& c) { return std::string(to_string(c.backbone.kind)); },
       [](ExperimentConfig& c, std::string_view v) { c.backbone.kind = backbone_kind_from_string(v); }},
      CAC_SIZE("backbone.channels", backbone.channels),
      CAC_SIZE("backbone.depth", backbone.depth),
      CAC_SIZE("backbone.stride", backbone.stride),
      CAC_BOOL("backbone.freeze", backbone.freeze),
      CAC_BOOL("backbone.standardize", backbone.standardize),
      CAC_REAL("train.initial_lr", train.initial_lr),
      CAC_REAL("train.power", train.power),
      CAC_SIZE("train.total_iters", train.total_iters),
      CAC_REAL("train.momentum", train.momentum),
      CAC_REAL("train.weight_decay", train.weight_decay),
      CAC_REAL("train.aux_weight", train.aux_weight),
      CAC_SIZE("train.batch_size", train.batch_size),
      CAC_SIZE("data.train_count", data.count),
      CAC_SIZE("data.eval_count", eval_count),
      CAC_SIZE("data.height", data.height),
      CAC_SIZE("data.width", data.width),
      CAC_SIZE("data.num_classes", data.num_classes),
      CAC_REAL("data.texture_noise", data.texture_noise),
      CAC_SIZE("data.blob_count_min", data.blob_count_min),
      CAC_SIZE("data.blob_count_max", data.blob_count_max),
      CAC_SIZE("data.blob_size_min", data.blob_size_min),
      CAC_SIZE("data.blob_size_max", data.blob_size_max),
      CAC_BOOL("eval.flip", eval_flip),
  };
  return table;
}

#undef CAC_SIZE
#undef CAC_REAL
#undef CAC_BOOL

template <typename Fn>
void collect(std::vector<std::string>& errors, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    errors.emplace_back(e.what());
  }
}

}  // namespace

std::uint64_t ExperimentConfig::require_seed() const {
  if (!seed) throw ConfigError("no seed given: set 'seed = N' in the config or pass --seed");
  return *seed;
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m;
  m.in_channels = kImageChannels;
  m.image_height = data.height;
  m.image_width = data.width;
  m.backbone = backbone;
  m.head.kind = head_kind;
  m.head.cac = cac;
  m.head.se_reduction = se_reduction;
  m.head.num_classes = data.num_classes;
  m.head.global_pool = global_pool;
  m.finalize();
  return m;
}

DatasetSpec ExperimentConfig::train_spec() const {
  DatasetSpec s = data;
  s.seed = seed.value_or(0);
  return s;
}

DatasetSpec ExperimentConfig::eval_spec() const {
  DatasetSpec s = train_spec();
  s.count = eval_count;
  return s;
}

std::vector<std::string> ExperimentConfig::validation_errors() const {
  std::vector<std::string> errors;
  if (!seed) errors.emplace_back("seed: missing (the CLI requires an explicit seed)");
  collect(errors, [&] { data.validate(); });
  collect(errors, [&] { train.validate(); });
  collect(errors, [&] { model_config().validate(); });
  if (data.count == 0) errors.emplace_back("data.train_count must be positive");
  if (eval_count == 0) errors.emplace_back("data.eval_count must be positive");
  return errors;
}

void ExperimentConfig::validate() const {
  const auto errors = validation_errors();
  if (errors.empty()) return;
  std::string msg = "invalid experiment configuration:";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw ConfigError(msg);
}

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& s : settings()) {
    if (key == s.key) {
      s.set(cfg, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      errors.push_back("line " + std::to_string(line_no) + ": expected 'key = value'");
      continue;
    }
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "config parse errors:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  for (const auto& s : settings()) {
    const std::string v = s.get(cfg);
    if (std::string_view(s.key) == "seed" && v.empty()) continue;
    os << s.key << " = " << v << '\n';
  }
  return os.str();
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace cac
