// align-lab: command-line front end for the alignlab library.
//
// Exit codes: 0 success, 1 verdict failure, 2 usage or config error,
// 3 numerical error.

#include "alignlab/config.hpp"
#include "alignlab/data.hpp"
#include "alignlab/diagnostics.hpp"
#include "alignlab/dynamics.hpp"
#include "alignlab/experiment.hpp"
#include "alignlab/geometry.hpp"
#include "alignlab/io.hpp"
#include "alignlab/svg.hpp"
#include "alignlab/xor.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace alignlab;

namespace {

struct Common {
  bool json = false;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
};

struct ExperimentSource {
  std::string preset;
  std::string config;
};

struct DatasetOptions {
  std::string dataset = "builtin";
  double eta = 1.0 / 6.0;
  double gamma = 0.0;
  std::string loss = "half-square";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_flag("--json", c.json, "Print machine-readable JSON to stdout");
  c.seed_opt = cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--out", c.out, "Output directory (overrides ALIGN_LAB_OUT and the config)");
}

void add_source(CLI::App* cmd, ExperimentSource& s) {
  auto* p = cmd->add_option("--preset", s.preset, "Embedded config: b1-spurious, b1-small, xor-appendixF");
  auto* c = cmd->add_option("--config", s.config, "Config file (.toml or .json)");
  p->excludes(c);
}

void add_dataset(CLI::App* cmd, DatasetOptions& d) {
  cmd->add_option("--dataset", d.dataset, "builtin, sampled, or a dataset JSON file")->capture_default_str();
  cmd->add_option("--eta", d.eta, "Box width for --dataset sampled");
  cmd->add_option("--gamma", d.gamma, "Leaky ReLU slope in [0, 1]")->capture_default_str();
  cmd->add_option("--loss", d.loss, "half-square or logistic")->capture_default_str();
}

ExperimentConfig load_source(const ExperimentSource& s, const Common& c) {
  if (s.preset.empty() && s.config.empty()) throw ConfigError("one of --preset or --config is required");
  ExperimentConfig cfg = s.preset.empty() ? load_config(s.config) : preset(s.preset);
  if (c.seed_opt != nullptr && c.seed_opt->count() > 0) cfg.set_seed(c.seed);
  cfg.validate();
  return cfg;
}

Dataset dataset_from(const DatasetOptions& d, std::uint64_t seed) {
  DatasetSpec spec;
  if (d.dataset == "builtin") {
    spec.source = DatasetSource::builtin;
  } else if (d.dataset == "sampled") {
    spec.source = DatasetSource::sampled;
    spec.eta = d.eta;
  } else {
    spec.source = DatasetSource::file;
    spec.path = d.dataset;
  }
  return build_dataset(spec, seed);
}

/// Output dir for subcommands whose artifacts are optional: empty unless
/// --out or ALIGN_LAB_OUT is set.
std::string optional_out(const Common& c) {
  ExperimentConfig none;
  none.output.dir.clear();
  return resolve_output_dir(none, c.out);
}

void write_report(const Common& c, const std::string& name, const Json& j) {
  const std::string dir = optional_out(c);
  if (!dir.empty()) atomic_write(fs::path(dir) / name, dump(j));
}

void print_json(const Json& j) { std::cout << j.dump(2) << "\n"; }

std::string fmt(double v, const char* spec = "%.6g") {
  if (!std::isfinite(v)) return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "not reached"; }

std::string fmt_vec(const Vec& v) {
  std::string s = "(";
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + ")";
}

void print_row(const std::string& key, const std::string& value) {
  std::printf("  %-28s %s\n", key.c_str(), value.c_str());
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

int cmd_run(const ExperimentSource& src, const Common& c, int jobs, int seeds) {
  ExperimentConfig base = load_source(src, c);
  const fs::path root = resolve_output_dir(base, c.out);
  if (seeds < 1) throw ConfigError("--seeds must be at least 1");
  std::vector<ExperimentConfig> cfgs;
  std::vector<fs::path> dirs;
  for (int i = 0; i < seeds; ++i) {
    ExperimentConfig cfg = base;
    cfg.set_seed(base.seed + static_cast<std::uint64_t>(i));
    cfg.validate();
    cfgs.push_back(cfg);
    dirs.push_back(seeds == 1 ? root : root / ("seed-" + std::to_string(cfg.seed)));
  }
  std::vector<std::optional<ExperimentResult>> results(cfgs.size());
  std::vector<std::exception_ptr> errors(cfgs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfgs.size(); i = next++) {
      try {
        results[i] = run_experiment(cfgs[i], dirs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_workers = std::max(1, std::min(jobs, static_cast<int>(cfgs.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  int status = kExitOk;
  Json all = Json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = *results[i];
    if (r.status != kExitOk) status = kExitVerdict;
    Json s = r.summary;
    s["out"] = dirs[i].string();
    all.push_back(s);
    if (c.json) continue;
    std::printf("%s (seed %llu): %s\n", cfgs[i].name.c_str(), static_cast<unsigned long long>(cfgs[i].seed),
                r.passed() ? "PASS" : "FAIL");
    for (const auto& v : r.verdicts) print_row(v.name, v.passed ? "pass" : "FAIL");
    for (const auto& n : r.notices) std::printf("  note: %s\n", n.c_str());
    std::printf("  artifacts: %s\n", dirs[i].string().c_str());
  }
  if (c.json) print_json(all.size() == 1 ? all[0] : all);
  return status;
}

// ---------------------------------------------------------------------------
// enumerate, constants
// ---------------------------------------------------------------------------

int cmd_enumerate(const DatasetOptions& d, const Common& c) {
  const Dataset ds = dataset_from(d, c.seed);
  const LossModel loss{parse_loss_kind(d.loss)};
  const auto cones = enumerate_cones(ds);
  const auto ex = find_extremal_vectors(ds, loss, d.gamma);
  const Json j = to_json(cones, ex);
  write_report(c, "enumerate.json", j);
  if (c.json) {
    print_json(j);
    return kExitOk;
  }
  std::printf("%zu patterns, %zu extremal%s%s\n", cones.cones.size(), ex.vectors.size(),
              ex.vectors.size() == 1 ? "" : "s", cones.approximate ? " (sampled, approximate)" : "");
  for (const auto& cone : cones.cones) {
    std::printf("  %s  dim %d  rep %s\n", cone.pattern.to_string().c_str(), cone.zero_set_dim,
                fmt_vec(cone.representative).c_str());
  }
  for (const auto& e : ex.vectors) {
    std::printf("  extremal %s  %s  D = %s  |D| = %s  %s\n", e.pattern.to_string().c_str(),
                std::string(to_string(e.kind)).c_str(), fmt_vec(e.D).c_str(), fmt(e.D.norm()).c_str(),
                e.proportionality > 0 ? "proportional" : "anti-proportional");
  }
  for (const auto& s : ex.saddles) std::printf("  saddle at %s\n", s.to_string().c_str());
  return kExitOk;
}

int cmd_constants(const DatasetOptions& d, const Common& c, double alpha0, double eps, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("--lambda must lie in (0, 1)");
  const Dataset ds = dataset_from(d, c.seed);
  const LossModel loss{parse_loss_kind(d.loss)};
  const auto k = compute_constants(ds, loss, d.gamma, alpha0, eps);
  const Json j = to_json(k, lambda);
  write_report(c, "constants.json", j);
  if (c.json) {
    print_json(j);
    return kExitOk;
  }
  print_row("D_max", fmt(k.d_max));
  print_row("D_min", fmt(k.d_min));
  print_row("alpha_min", fmt(k.alpha_min));
  print_row("delta_0", fmt(k.delta_0));
  print_row("tau(lambda=" + fmt(lambda) + ")", fmt(k.tau(eps, lambda)));
  print_row("lambda*(alpha_0=" + fmt(alpha0) + ")", fmt(k.lambda_star_value));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// phases, spurious
// ---------------------------------------------------------------------------

struct TrainedRun {
  ExperimentConfig cfg;
  Dataset ds;
  Trace trace;
};

TrainedRun train_source(const ExperimentSource& src, const Common& c) {
  ExperimentConfig cfg = load_source(src, c);
  if (cfg.kind != ExperimentKind::train) throw ConfigError("this subcommand needs a training config");
  Dataset ds = build_dataset(cfg.dataset, cfg.seed);
  NetworkState s = init_network(cfg.init, ds.d());
  Trace trace = train(s, ds, cfg.train, cfg.init);
  return {std::move(cfg), std::move(ds), std::move(trace)};
}

int cmd_phases(const ExperimentSource& src, const Common& c, std::optional<double> eps,
               std::optional<double> eps2, std::optional<double> eps3) {
  auto run = train_source(src, c);
  auto& g = run.cfg.diagnostics;
  if (eps) g.epsilon = *eps;
  if (eps2) g.eps_2 = *eps2;
  if (eps3) g.eps_3 = *eps3;
  run.cfg.validate();
  const auto k = compute_constants(run.ds, run.trace.config.loss, run.trace.config.gamma, g.alpha_0, g.epsilon);
  const auto r = detect_phases(run.trace, run.ds, k, g.epsilon, g.eps_2, g.eps_3);
  const Json j = to_json(r);
  write_report(c, "phases.json", j);
  const bool ok = r.tau && r.tau_2 && r.tau_3 && *r.tau < *r.tau_2 && *r.tau_2 < *r.tau_3 && r.frozen_violations == 0;
  if (c.json) {
    print_json(j);
    return ok ? kExitOk : kExitVerdict;
  }
  std::printf("%s (seed %llu): phases %s\n", run.cfg.name.c_str(), static_cast<unsigned long long>(run.cfg.seed),
              ok ? "PASS" : "FAIL");
  print_row("tau (theory)", fmt(r.tau_theory));
  print_row("tau", fmt(r.tau));
  print_row("tau_2", fmt(r.tau_2));
  print_row("tau_3", fmt(r.tau_3));
  print_row("|I| / |N| / rest", std::to_string(r.classification.positive.size()) + " / " +
                                    std::to_string(r.classification.negative.size()) + " / " +
                                    std::to_string(r.classification.rest.size()));
  if (r.at_tau) {
    const auto& q = r.at_tau->cosine_to_d_star;
    print_row("cos(w, D*) at tau q05/q50", fmt(q.q05) + " / " + fmt(q.q50));
    print_row("growth violations at tau", std::to_string(r.at_tau->growth_violations));
    print_row("max ||w||/|a| at tau", fmt(r.at_tau->max_norm_ratio));
  }
  if (r.at_tau_2) print_row("min correlation at tau_2", fmt(r.at_tau_2->min_correlation));
  if (r.at_tau_3) {
    print_row("||beta* - sum a w|| at tau_3", fmt(r.at_tau_3->beta_gap));
    print_row("min pairwise cos at tau_3", fmt(r.at_tau_3->min_pairwise_cosine));
  }
  print_row("frozen violations", std::to_string(r.frozen_violations));
  for (const auto& w : r.warnings) std::printf("  warning: %s\n", w.c_str());
  return ok ? kExitOk : kExitVerdict;
}

int cmd_spurious(const ExperimentSource& src, const Common& c, std::optional<double> tol_residual,
                 std::optional<double> tol_loss) {
  auto run = train_source(src, c);
  auto& g = run.cfg.diagnostics;
  if (tol_residual) g.tol_residual = *tol_residual;
  if (tol_loss) g.tol_loss = *tol_loss;
  run.cfg.validate();
  const auto fit = ols_estimator(run.ds);
  const auto& loss = run.trace.config.loss;
  double loss_star = 0.0;
  for (int k = 0; k < run.ds.n(); ++k) loss_star += loss.value(fit.beta.dot(run.ds.x(k)), run.ds.y(k));
  loss_star /= run.ds.n();
  const auto r = verify_spurious_convergence(run.trace, run.ds, g.tol_residual, g.tol_loss * loss_star);
  const Json j = to_json(r);
  write_report(c, "spurious.json", j);
  if (c.json) {
    print_json(j);
    return r.passed() ? kExitOk : kExitVerdict;
  }
  std::printf("%s (seed %llu): spurious convergence %s\n", run.cfg.name.c_str(),
              static_cast<unsigned long long>(run.cfg.seed), r.passed() ? "PASS" : "FAIL");
  print_row("beta*", fmt_vec(r.beta_star));
  print_row("L(beta*)", fmt(r.loss_star));
  print_row("final loss", fmt(r.final_loss));
  for (const auto& ch : r.checks) {
    print_row(ch.name, std::string(ch.passed ? "pass" : "FAIL") + "  value " + fmt(ch.value) + "  threshold " +
                           fmt(ch.threshold));
  }
  for (const auto& [pattern, count] : r.cone_histogram) print_row("cone " + pattern, std::to_string(count));
  if (!r.note.empty()) std::printf("  note: %s\n", r.note.c_str());
  return r.passed() ? kExitOk : kExitVerdict;
}

// ---------------------------------------------------------------------------
// xor
// ---------------------------------------------------------------------------

int cmd_xor(const Common& c, int d, std::int64_t samples, int random, int quadrature, int signs) {
  ExperimentConfig cfg = preset("xor-appendixF");
  cfg.set_seed(c.seed);
  cfg.xor_run.d = d;
  cfg.xor_run.n_samples = samples;
  cfg.xor_run.random_directions = random;
  cfg.xor_run.quadrature_directions = quadrature;
  cfg.xor_run.sign_directions = signs;
  const fs::path dir = resolve_output_dir(cfg, c.out);
  const auto r = run_experiment(cfg, dir);
  if (c.json) {
    Json j = r.summary;
    j["report"] = Json::parse(read_file(dir / "xor.json"));
    print_json(j);
    return r.status;
  }
  std::printf("xor d=%d, %lld samples, seed %llu: %d extremal vectors among the candidates, %s\n", d,
              static_cast<long long>(samples), static_cast<unsigned long long>(c.seed),
              r.summary["extremal_count"].get<int>(), r.passed() ? "PASS" : "FAIL");
  for (const auto& v : r.verdicts) print_row(v.name, v.passed ? "pass" : "FAIL");
  std::printf("  artifacts: %s\n", dir.string().c_str());
  return r.status;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

int cmd_plot(const ExperimentSource& src, const Common& c, const std::string& snapshots,
             std::vector<std::string> times) {
  std::vector<std::string> files;
  std::vector<std::string> notices;
  fs::path dir;
  if (!snapshots.empty()) {
    const Json j = Json::parse(read_file(snapshots));
    const Dataset ds = dataset_from_json(j.at("dataset"));
    const double gamma = j.at("gamma").get<double>();
    std::optional<Vec> beta;
    try {
      beta = ols_estimator(ds).beta;
    } catch (const RankDeficientError&) {
    }
    dir = c.out.empty() ? fs::path(snapshots).parent_path() : fs::path(c.out);
    if (dir.empty()) dir = ".";
    std::vector<std::string> wanted;
    for (const auto& t : times) {
      bool found = false;
      for (const auto& snap : j.at("snapshots")) {
        const auto label = snap.at("label").get<std::string>();
        if (label == t || label == "t" + t) {
          wanted.push_back(label);
          found = true;
        }
      }
      if (!found) notices.push_back("time '" + t + "' is not among the stored snapshots");
    }
    for (const auto& snap : j.at("snapshots")) {
      const std::string label = snap.at("label").get<std::string>();
      if (!times.empty() && std::find(wanted.begin(), wanted.end(), label) == wanted.end()) continue;
      const NetworkState s = network_from_json(snap.at("state"));
      char title[96];
      std::snprintf(title, sizeof title, "%s: step %lld, t = %.4g", label.c_str(),
                    static_cast<long long>(s.step_count), s.t);
      FigureOptions opt;
      opt.title = title;
      const auto f = function_plot(s, ds, gamma, beta, opt);
      if (f.svg) {
        atomic_write(dir / ("function-" + label + ".svg"), *f.svg);
        files.push_back("function-" + label + ".svg");
      } else {
        notices.push_back(f.notice);
      }
      opt.width = 400;
      opt.height = 420;
      const auto g = polar_plot(s, ds, opt);
      if (g.svg) {
        atomic_write(dir / ("polar-" + label + ".svg"), *g.svg);
        files.push_back("polar-" + label + ".svg");
      } else {
        notices.push_back(g.notice);
      }
    }
  } else {
    auto run = train_source(src, c);
    dir = resolve_output_dir(run.cfg, c.out);
    if (times.empty()) times = run.cfg.output.figure_times;
    std::optional<PhaseReport> phases;
    if (run.ds.d() == 2) {
      const auto& g = run.cfg.diagnostics;
      const auto k = compute_constants(run.ds, run.trace.config.loss, run.trace.config.gamma, g.alpha_0, g.epsilon);
      phases = detect_phases(run.trace, run.ds, k, g.epsilon, g.eps_2, g.eps_3);
    }
    const auto picks = select_snapshots(run.trace, times, phases ? &*phases : nullptr, notices);
    std::optional<Vec> beta;
    try {
      beta = ols_estimator(run.ds).beta;
    } catch (const RankDeficientError&) {
    }
    emit_figures(run.trace, run.ds, picks, beta, dir, files, notices);
  }
  if (c.json) {
    print_json({{"out", dir.string()}, {"files", files}, {"notices", notices}});
    return kExitOk;
  }
  for (const auto& f : files) std::printf("wrote %s\n", (dir / f).string().c_str());
  for (const auto& n : notices) std::printf("note: %s\n", n.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"align-lab: early alignment and training dynamics of two-layer ReLU networks"};
  app.require_subcommand(1);

  Common run_c, enum_c, const_c, phase_c, spur_c, xor_c, plot_c;
  ExperimentSource run_s, phase_s, spur_s, plot_s;
  DatasetOptions enum_d, const_d;

  auto* run = app.add_subcommand("run", "Run a preset or config end to end and write its artifacts");
  add_common(run, run_c);
  add_source(run, run_s);
  int jobs = 1;
  int seeds = 1;
  run->add_option("--jobs", jobs, "Worker threads for --seeds")->check(CLI::PositiveNumber);
  run->add_option("--seeds", seeds, "Run this many consecutive seeds, each in <out>/seed-<s>")
      ->check(CLI::PositiveNumber);

  auto* en = app.add_subcommand("enumerate", "List activation cones and extremal vectors (d = 2 exact)");
  add_common(en, enum_c);
  add_dataset(en, enum_d);

  auto* co = app.add_subcommand("constants", "Alignment constants: D_max, tau, lambda*");
  add_common(co, const_c);
  add_dataset(co, const_d);
  double alpha0 = 0.1;
  double eps = 0.25;
  double lambda = 1e-3;
  co->add_option("--alpha0", alpha0, "alpha_0 in (0, 1]")->capture_default_str();
  co->add_option("--eps", eps, "epsilon in (0, 1/3)")->capture_default_str();
  co->add_option("--lambda", lambda, "Initialisation scale")->capture_default_str();

  auto* ph = app.add_subcommand("phases", "Train and detect tau, tau_2, tau_3");
  add_common(ph, phase_c);
  add_source(ph, phase_s);
  std::optional<double> ph_eps, ph_eps2, ph_eps3;
  ph->add_option("--eps", ph_eps, "Override diagnostics.epsilon");
  ph->add_option("--eps2", ph_eps2, "Override diagnostics.eps_2");
  ph->add_option("--eps3", ph_eps3, "Override diagnostics.eps_3");

  auto* sp = app.add_subcommand("spurious", "Train and check convergence to the OLS fit");
  add_common(sp, spur_c);
  add_source(sp, spur_s);
  std::optional<double> tol_res, tol_loss;
  sp->add_option("--tol-residual", tol_res, "Override diagnostics.tol_residual");
  sp->add_option("--tol-loss", tol_loss, "Override diagnostics.tol_loss (relative to L(beta*))");

  auto* xo = app.add_subcommand("xor", "Monte-Carlo checks of the Gaussian XOR population gradient");
  add_common(xo, xor_c);
  int xor_d = 8;
  std::int64_t samples = 1000000;
  int random = 20;
  int quadrature = 50;
  int signs = 20;
  xo->add_option("--d", xor_d, "Input dimension")->capture_default_str();
  xo->add_option("--samples", samples, "Monte-Carlo sample count")->capture_default_str();
  xo->add_option("--random", random, "Random non-candidate directions")->capture_default_str();
  xo->add_option("--quadrature", quadrature, "In-plane directions compared with quadrature")->capture_default_str();
  xo->add_option("--signs", signs, "Directions for the sign identities")->capture_default_str();

  auto* pl = app.add_subcommand("plot", "Emit SVG figures from a snapshots.json or a fresh run");
  add_common(pl, plot_c);
  add_source(pl, plot_s);
  std::string snapshots;
  std::vector<std::string> times;
  pl->add_option("--snapshots", snapshots, "snapshots.json written by a previous run");
  pl->add_option("--times", times, "Labels or flow times: init, tau, tau2, tau3, final, <t>");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_s, run_c, jobs, seeds);
    if (*en) return cmd_enumerate(enum_d, enum_c);
    if (*co) return cmd_constants(const_d, const_c, alpha0, eps, lambda);
    if (*ph) return cmd_phases(phase_s, phase_c, ph_eps, ph_eps2, ph_eps3);
    if (*sp) return cmd_spurious(spur_s, spur_c, tol_res, tol_loss);
    if (*xo) return cmd_xor(xor_c, xor_d, samples, random, quadrature, signs);
    if (*pl) return cmd_plot(plot_s, plot_c, snapshots, times);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitConfig;
}
