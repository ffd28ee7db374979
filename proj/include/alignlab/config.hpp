#pragma once

#include "alignlab/data.hpp"
#include "alignlab/dataset.hpp"
#include "alignlab/diagnostics.hpp"
#include "alignlab/dynamics.hpp"
#include "alignlab/io.hpp"
#include "alignlab/loss.hpp"

#ifndef TOML_FLOAT_CHARCONV
#define TOML_FLOAT_CHARCONV 1
#endif
#include <toml.hpp>

#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace alignlab {

enum class ExperimentKind { train, xor_population };
enum class DatasetSource { builtin, file, sampled };

inline std::string_view to_string(ExperimentKind k) { return k == ExperimentKind::train ? "train" : "xor"; }

inline std::string_view to_string(DatasetSource s) {
  switch (s) {
    case DatasetSource::builtin: return "builtin";
    case DatasetSource::file: return "file";
    case DatasetSource::sampled: return "sampled";
  }
  return "builtin";
}

struct DatasetSpec {
  DatasetSource source = DatasetSource::builtin;
  std::string path;        // for source = file
  double eta = 1.0 / 6.0;  // box width for source = sampled

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

/// Thresholds for the phase and spurious-convergence verdicts. tol_loss is
/// relative to the OLS loss.
struct DiagnosticsConfig {
  double epsilon = 0.25;
  double alpha_0 = 0.1;
  double eps_2 = 0.05;
  double eps_3 = 0.05;
  double align_tol = kDefaultAlignTol;
  double tol_residual = 0.02;
  double tol_loss = 0.05;
  bool phases = true;
  bool spurious = true;

  friend bool operator==(const DiagnosticsConfig&, const DiagnosticsConfig&) = default;
};

struct XorRunConfig {
  int d = 8;
  std::int64_t n_samples = 1000000;
  int random_directions = 20;
  int quadrature_directions = 50;
  int sign_directions = 20;

  friend bool operator==(const XorRunConfig&, const XorRunConfig&) = default;
};

struct OutputConfig {
  std::string dir = "out";
  /// Snapshot selectors: "init", "tau", "tau2", "tau3", "final" or a flow time.
  std::vector<std::string> figure_times = {"init", "tau", "tau2", "tau3", "final"};
  bool neuron_csv = false;
  std::int64_t neuron_csv_every = 0;  // step stride; 0 keeps every snapshot
  bool snapshots_json = true;

  friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct ExperimentConfig {
  std::string name = "custom";
  ExperimentKind kind = ExperimentKind::train;
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  InitConfig init;    // init.seed mirrors seed
  TrainConfig train;  // carries loss and gamma
  DiagnosticsConfig diagnostics;
  XorRunConfig xor_run;
  OutputConfig output;

  void set_seed(std::uint64_t s) {
    seed = s;
    init.seed = s;
  }

  void validate() const {
    if (seed > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      throw ConfigError("seed must fit in a signed 64-bit integer");
    }
    if (kind == ExperimentKind::xor_population) {
      XorConfig{xor_run.d, xor_run.n_samples, seed}.validate();
      if (xor_run.random_directions < 0 || xor_run.quadrature_directions < 0 || xor_run.sign_directions < 0) {
        throw ConfigError("xor direction counts must be nonnegative");
      }
      return;
    }
    init.validate();
    train.validate();
    if (dataset.source == DatasetSource::sampled && !(dataset.eta > 0.0)) {
      throw ConfigError("dataset.eta must be positive");
    }
    if (dataset.source == DatasetSource::file && dataset.path.empty()) {
      throw ConfigError("dataset.path is required when dataset.source = \"file\"");
    }
    const auto& g = diagnostics;
    if (!(g.epsilon > 0.0 && g.epsilon < 1.0 / 3.0)) throw ConfigError("diagnostics.epsilon must lie in (0, 1/3)");
    if (!(g.alpha_0 > 0.0 && g.alpha_0 <= 1.0)) throw ConfigError("diagnostics.alpha_0 must lie in (0, 1]");
    for (double v : {g.eps_2, g.eps_3, g.align_tol, g.tol_residual, g.tol_loss}) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("diagnostics thresholds must be positive");
    }
    if (output.neuron_csv_every < 0) throw ConfigError("output.neuron_csv_every must be nonnegative");
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["name"] = c.name;
  j["kind"] = std::string(to_string(c.kind));
  j["seed"] = static_cast<std::int64_t>(c.seed);
  Json ds = {{"source", std::string(to_string(c.dataset.source))}, {"eta", c.dataset.eta}};
  if (!c.dataset.path.empty()) ds["path"] = c.dataset.path;
  j["dataset"] = ds;
  j["model"] = {{"loss", std::string(to_string(c.train.loss.kind))}, {"gamma", c.train.gamma}};
  j["init"] = {{"lambda", c.init.lambda},
               {"m", c.init.m},
               {"mode", std::string(to_string(c.init.mode))},
               {"weights", std::string(to_string(c.init.w_distribution))},
               {"positive_fraction", c.init.positive_fraction},
               {"dominated_margin", c.init.dominated_margin}};
  j["train"] = {{"lr", c.train.lr},
                {"max_steps", c.train.max_steps},
                {"record_every", c.train.record_every},
                {"dense_until", c.train.dense_until},
                {"sparse_every", c.train.sparse_every},
                {"stop_grad_norm", c.train.stop_grad_norm},
                {"full_snapshot_limit", c.train.full_snapshot_limit}};
  const auto& g = c.diagnostics;
  j["diagnostics"] = {{"epsilon", g.epsilon},       {"alpha_0", g.alpha_0},   {"eps_2", g.eps_2},
                      {"eps_3", g.eps_3},           {"align_tol", g.align_tol}, {"tol_residual", g.tol_residual},
                      {"tol_loss", g.tol_loss},     {"phases", g.phases},     {"spurious", g.spurious}};
  j["xor"] = {{"d", c.xor_run.d},
              {"samples", c.xor_run.n_samples},
              {"random_directions", c.xor_run.random_directions},
              {"quadrature_directions", c.xor_run.quadrature_directions},
              {"sign_directions", c.xor_run.sign_directions}};
  j["output"] = {{"dir", c.output.dir},
                 {"figure_times", c.output.figure_times},
                 {"neuron_csv", c.output.neuron_csv},
                 {"neuron_csv_every", c.output.neuron_csv_every},
                 {"snapshots_json", c.output.snapshots_json}};
  return j;
}

namespace detail {

inline toml::table json_to_toml_table(const Json& j);

inline void append_toml_value(toml::array& arr, const Json& v) {
  if (v.is_string()) {
    arr.push_back(v.get<std::string>());
  } else if (v.is_boolean()) {
    arr.push_back(v.get<bool>());
  } else if (v.is_number_integer()) {
    arr.push_back(v.get<std::int64_t>());
  } else if (v.is_number()) {
    arr.push_back(v.get<double>());
  } else {
    throw ConfigError("unsupported value in config array");
  }
}

inline toml::table json_to_toml_table(const Json& j) {
  toml::table t;
  for (const auto& [k, v] : j.items()) {
    if (v.is_object()) {
      t.insert(k, json_to_toml_table(v));
    } else if (v.is_array()) {
      toml::array arr;
      for (const auto& e : v) append_toml_value(arr, e);
      t.insert(k, std::move(arr));
    } else if (v.is_string()) {
      t.insert(k, v.get<std::string>());
    } else if (v.is_boolean()) {
      t.insert(k, v.get<bool>());
    } else if (v.is_number_integer()) {
      t.insert(k, v.get<std::int64_t>());
    } else if (v.is_number()) {
      t.insert(k, v.get<double>());
    }
  }
  return t;
}

using LineMap = std::map<std::string, int>;

inline Json toml_node_to_json(const toml::node& n, const std::string& path, LineMap& lines) {
  lines[path] = static_cast<int>(n.source().begin.line);
  if (const auto* t = n.as_table()) {
    Json out = Json::object();
    for (const auto& [k, v] : *t) {
      const std::string key(k.str());
      out[key] = toml_node_to_json(v, path.empty() ? key : path + "." + key, lines);
    }
    return out;
  }
  if (const auto* a = n.as_array()) {
    Json out = Json::array();
    for (std::size_t i = 0; i < a->size(); ++i) {
      out.push_back(toml_node_to_json(*a->get(i), path + "[" + std::to_string(i) + "]", lines));
    }
    return out;
  }
  if (const auto* v = n.as_string()) return v->get();
  if (const auto* v = n.as_integer()) return v->get();
  if (const auto* v = n.as_floating_point()) return v->get();
  if (const auto* v = n.as_boolean()) return v->get();
  throw ConfigError("line " + std::to_string(n.source().begin.line) + ", field " + path +
                    ": dates and times are not supported");
}

/// Field access over a parsed config object with path and line context in
/// every error.
class FieldReader {
 public:
  FieldReader(const Json& j, std::string path, const LineMap& lines) : j_(j), path_(std::move(path)), lines_(lines) {
    if (!j_.is_object()) fail(path_, "expected a table");
  }

  [[noreturn]] void fail(const std::string& field, const std::string& msg) const {
    std::string where;
    if (auto it = lines_.find(field); it != lines_.end() && it->second > 0) {
      where = "line " + std::to_string(it->second) + ", ";
    }
    throw ConfigError("config " + where + "field '" + field + "': " + msg);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number()) fail(field(key), "expected a number");
      out = v->get<double>();
    }
  }

  template <class I>
    requires std::is_integral_v<I> && (!std::is_same_v<I, bool>)
  void read(const std::string& key, I& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer()) fail(field(key), "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < static_cast<std::int64_t>(std::numeric_limits<I>::min()) ||
          static_cast<std::uint64_t>(std::max<std::int64_t>(x, 0)) >
              static_cast<std::uint64_t>(std::numeric_limits<I>::max())) {
        fail(field(key), "integer out of range");
      }
      out = static_cast<I>(x);
    }
  }

  void read(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) fail(field(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) fail(field(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, std::vector<std::string>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) fail(field(key), "expected an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail(field(key), "expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  /// Parses a string field through `parse`, turning its error into a field error.
  template <class T, class F>
  void read_enum(const std::string& key, T& out, F parse) {
    std::string s;
    read(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      fail(field(key), e.what());
    }
  }

  FieldReader sub(const std::string& key) {
    static const Json empty = Json::object();
    const auto* v = find(key);
    return FieldReader(v ? *v : empty, field(key), lines_);
  }

  void reject_unknown() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) fail(field(k), "unknown field");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  const LineMap& lines_;
  std::set<std::string> seen_;
};

inline ExperimentConfig config_from_json(const Json& j, const LineMap& lines) {
  ExperimentConfig c;
  FieldReader root(j, "", lines);
  root.read("name", c.name);
  root.read_enum("kind", c.kind, [](std::string_view s) {
    if (s == "train") return ExperimentKind::train;
    if (s == "xor") return ExperimentKind::xor_population;
    throw ConfigError("unknown experiment kind: " + std::string(s));
  });
  std::int64_t seed = 0;
  root.read("seed", seed);
  if (seed < 0) root.fail("seed", "must be nonnegative");
  c.set_seed(static_cast<std::uint64_t>(seed));

  auto ds = root.sub("dataset");
  ds.read_enum("source", c.dataset.source, [](std::string_view s) {
    if (s == "builtin") return DatasetSource::builtin;
    if (s == "file") return DatasetSource::file;
    if (s == "sampled") return DatasetSource::sampled;
    throw ConfigError("unknown dataset source: " + std::string(s));
  });
  ds.read("path", c.dataset.path);
  ds.read("eta", c.dataset.eta);
  ds.reject_unknown();

  auto model = root.sub("model");
  model.read_enum("loss", c.train.loss.kind, parse_loss_kind);
  model.read("gamma", c.train.gamma);
  model.reject_unknown();

  auto init = root.sub("init");
  init.read("lambda", c.init.lambda);
  init.read("m", c.init.m);
  init.read_enum("mode", c.init.mode, parse_init_mode);
  init.read_enum("weights", c.init.w_distribution, parse_weight_distribution);
  init.read("positive_fraction", c.init.positive_fraction);
  init.read("dominated_margin", c.init.dominated_margin);
  init.reject_unknown();

  auto train = root.sub("train");
  train.read("lr", c.train.lr);
  train.read("max_steps", c.train.max_steps);
  train.read("record_every", c.train.record_every);
  train.read("dense_until", c.train.dense_until);
  train.read("sparse_every", c.train.sparse_every);
  train.read("stop_grad_norm", c.train.stop_grad_norm);
  train.read("full_snapshot_limit", c.train.full_snapshot_limit);
  train.reject_unknown();

  auto diag = root.sub("diagnostics");
  auto& g = c.diagnostics;
  diag.read("epsilon", g.epsilon);
  diag.read("alpha_0", g.alpha_0);
  diag.read("eps_2", g.eps_2);
  diag.read("eps_3", g.eps_3);
  diag.read("align_tol", g.align_tol);
  diag.read("tol_residual", g.tol_residual);
  diag.read("tol_loss", g.tol_loss);
  diag.read("phases", g.phases);
  diag.read("spurious", g.spurious);
  diag.reject_unknown();

  auto x = root.sub("xor");
  x.read("d", c.xor_run.d);
  x.read("samples", c.xor_run.n_samples);
  x.read("random_directions", c.xor_run.random_directions);
  x.read("quadrature_directions", c.xor_run.quadrature_directions);
  x.read("sign_directions", c.xor_run.sign_directions);
  x.reject_unknown();

  auto out = root.sub("output");
  out.read("dir", c.output.dir);
  out.read("figure_times", c.output.figure_times);
  out.read("neuron_csv", c.output.neuron_csv);
  out.read("neuron_csv_every", c.output.neuron_csv_every);
  out.read("snapshots_json", c.output.snapshots_json);
  out.reject_unknown();

  root.reject_unknown();
  c.validate();
  return c;
}

}  // namespace detail

inline std::string config_to_toml(const ExperimentConfig& c) {
  std::ostringstream ss;
  ss << detail::json_to_toml_table(config_to_json(c)) << "\n";
  return ss.str();
}

inline ExperimentConfig config_from_json_text(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return detail::config_from_json(j, {});
}

inline ExperimentConfig config_from_toml_text(std::string_view text, std::string_view source = "config") {
  toml::table t;
  try {
    t = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    throw ConfigError("config line " + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
  }
  detail::LineMap lines;
  const Json j = detail::toml_node_to_json(t, "", lines);
  return detail::config_from_json(j, lines);
}

/// Loads a .json or .toml config. A relative dataset path is resolved
/// against the config's directory and must exist.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw ConfigError("config not found: " + path.string());
  const std::string text = read_file(path);
  ExperimentConfig c = path.extension() == ".json" ? config_from_json_text(text)
                                                   : config_from_toml_text(text, path.string());
  if (c.kind == ExperimentKind::train && c.dataset.source == DatasetSource::file) {
    fs::path p(c.dataset.path);
    if (p.is_relative()) c.dataset.path = (path.parent_path() / p).lexically_normal().string();
    if (!fs::exists(c.dataset.path)) throw ConfigError("dataset file not found: " + c.dataset.path);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::string_view kPresetB1Spurious = R"(name = "b1-spurious"
kind = "train"
seed = 0

[dataset]
source = "builtin"

[model]
loss = "half-square"
gamma = 0.0

[init]
lambda = 1e-3
m = 2000
mode = "balanced"
weights = "gaussian-normalised"

[train]
lr = 1e-3
max_steps = 2000000
record_every = 24
dense_until = 40000
sparse_every = 2000

[diagnostics]
epsilon = 0.25
alpha_0 = 0.1
eps_2 = 0.05
eps_3 = 0.05
tol_residual = 0.02
tol_loss = 0.05

[output]
dir = "out/b1-spurious"
)";

inline constexpr std::string_view kPresetB1Small = R"(name = "b1-small"
kind = "train"
seed = 0

[dataset]
source = "builtin"

[model]
loss = "half-square"
gamma = 0.0

[init]
lambda = 1e-3
m = 200
mode = "balanced"
weights = "gaussian-normalised"

[train]
lr = 1e-3
max_steps = 200000
record_every = 24
dense_until = 40000
sparse_every = 2000

[diagnostics]
epsilon = 0.25
alpha_0 = 0.1
eps_2 = 0.05
eps_3 = 0.05
tol_residual = 0.02
tol_loss = 0.05

[output]
dir = "out/b1-small"
)";

inline constexpr std::string_view kPresetXor = R"(name = "xor-appendixF"
kind = "xor"
seed = 0

[xor]
d = 8
samples = 1000000
random_directions = 20
quadrature_directions = 50
sign_directions = 20

[output]
dir = "out/xor"
)";

}  // namespace detail

inline std::vector<std::string> preset_names() { return {"b1-spurious", "b1-small", "xor-appendixF"}; }

inline ExperimentConfig preset(std::string_view name) {
  if (name == "b1-spurious") return config_from_toml_text(detail::kPresetB1Spurious, "preset b1-spurious");
  if (name == "b1-small") return config_from_toml_text(detail::kPresetB1Small, "preset b1-small");
  if (name == "xor-appendixF") return config_from_toml_text(detail::kPresetXor, "preset xor-appendixF");
  throw ConfigError("unknown preset: " + std::string(name));
}

/// Precedence: explicit flag, then ALIGN_LAB_OUT, then the config.
inline std::string resolve_output_dir(const ExperimentConfig& c, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("ALIGN_LAB_OUT"); env != nullptr && *env != '\0') return env;
  return c.output.dir;
}

inline Dataset build_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  switch (spec.source) {
    case DatasetSource::builtin: return builtin_three_point();
    case DatasetSource::file: return load_dataset(spec.path);
    case DatasetSource::sampled: return sample_three_point_boxes(spec.eta, seed);
  }
  return builtin_three_point();
}

}  // namespace alignlab
