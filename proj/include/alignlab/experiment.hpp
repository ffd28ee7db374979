#pragma once

#include "alignlab/config.hpp"
#include "alignlab/data.hpp"
#include "alignlab/diagnostics.hpp"
#include "alignlab/dynamics.hpp"
#include "alignlab/geometry.hpp"
#include "alignlab/io.hpp"
#include "alignlab/svg.hpp"
#include "alignlab/xor.hpp"

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace alignlab {

/// Process exit codes shared by the CLI.
enum ExitCode : int { kExitOk = 0, kExitVerdict = 1, kExitConfig = 2, kExitNumerical = 3 };

struct NamedVerdict {
  std::string name;
  bool passed = false;
};

struct ExperimentResult {
  int status = kExitOk;  // kExitOk or kExitVerdict
  std::vector<NamedVerdict> verdicts;
  std::vector<std::string> files;  // written, relative to the output dir
  std::vector<std::string> notices;
  Json summary;

  bool passed() const { return status == kExitOk; }
};

/// A snapshot picked for a figure, with a file-name-safe label.
struct SelectedSnapshot {
  std::string label;
  std::size_t index = 0;
};

namespace detail {

inline std::string time_label(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%g", t);
  return buf;
}

inline std::optional<std::size_t> snapshot_at(const Trace& trace, double t) {
  const double tol = 0.5 * trace.config.lr;
  for (std::size_t i = 0; i < trace.snapshots.size(); ++i) {
    if (trace.snapshots[i].time >= t - tol) return i;
  }
  return std::nullopt;
}

}  // namespace detail

/// Resolves "init", "final", "tau", "tau2", "tau3" or a flow time to a
/// snapshot. Phase labels without a detected time are skipped with a notice;
/// a flow time past the end of the trace is an error.
inline std::vector<SelectedSnapshot> select_snapshots(const Trace& trace, const std::vector<std::string>& times,
                                                      const PhaseReport* phases,
                                                      std::vector<std::string>& notices) {
  std::vector<SelectedSnapshot> out;
  auto add = [&](std::string label, std::size_t i) {
    for (const auto& s : out) {
      if (s.label == label) return;
    }
    out.push_back({std::move(label), i});
  };
  for (const auto& t : times) {
    if (t == "init") {
      add("init", 0);
    } else if (t == "final") {
      add("final", trace.snapshots.size() - 1);
    } else if (t == "tau" || t == "tau2" || t == "tau3") {
      const std::optional<double>* v = nullptr;
      if (phases != nullptr) v = t == "tau" ? &phases->tau : (t == "tau2" ? &phases->tau_2 : &phases->tau_3);
      if (v == nullptr || !v->has_value()) {
        notices.push_back("figure time '" + t + "' skipped: phase time not available");
        continue;
      }
      add(t, *detail::snapshot_at(trace, **v));
    } else {
      double value = 0.0;
      std::size_t used = 0;
      try {
        value = std::stod(t, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != t.size() || !std::isfinite(value)) throw ConfigError("invalid figure time '" + t + "'");
      const auto i = detail::snapshot_at(trace, value);
      if (!i) throw ConfigError("figure time " + t + " is past the end of the trace");
      add(detail::time_label(value), *i);
    }
  }
  return out;
}

/// Writes function-<label>.svg and polar-<label>.svg for each selection.
inline void emit_figures(const Trace& trace, const Dataset& ds, const std::vector<SelectedSnapshot>& picks,
                         const std::optional<Vec>& beta, const std::filesystem::path& dir,
                         std::vector<std::string>& files, std::vector<std::string>& notices) {
  bool function_notice = false;
  bool polar_notice = false;
  for (const auto& p : picks) {
    const auto& snap = trace.snapshots[p.index];
    const NetworkState s = snap.network();
    char title[96];
    std::snprintf(title, sizeof title, "%s: step %lld, t = %.4g", p.label.c_str(),
                  static_cast<long long>(snap.step), snap.time);
    FigureOptions opt;
    opt.title = title;
    const auto f = function_plot(s, ds, trace.config.gamma, beta, opt);
    if (f.svg) {
      const std::string name = "function-" + p.label + ".svg";
      atomic_write(dir / name, *f.svg);
      files.push_back(name);
    } else if (!function_notice) {
      notices.push_back(f.notice);
      function_notice = true;
    }
    FigureOptions popt = opt;
    popt.width = 400;
    popt.height = 420;
    const auto g = polar_plot(s, ds, popt);
    if (g.svg) {
      const std::string name = "polar-" + p.label + ".svg";
      atomic_write(dir / name, *g.svg);
      files.push_back(name);
    } else if (!polar_notice) {
      notices.push_back(g.notice);
      polar_notice = true;
    }
  }
}

inline Json snapshots_to_json(const Trace& trace, const Dataset& ds, const std::vector<SelectedSnapshot>& picks) {
  Json snaps = Json::array();
  for (const auto& p : picks) {
    const auto& s = trace.snapshots[p.index];
    snaps.push_back({{"label", p.label}, {"step", s.step}, {"time", s.time}, {"loss", s.loss},
                     {"state", to_json(s.network())}});
  }
  return {{"dataset", dataset_to_json(ds)},
          {"gamma", trace.config.gamma},
          {"loss", std::string(to_string(trace.config.loss.kind))},
          {"lr", trace.config.lr},
          {"snapshots", snaps}};
}

namespace detail {

inline Json verdicts_json(const std::vector<NamedVerdict>& v) {
  Json out = Json::array();
  for (const auto& x : v) out.push_back({{"name", x.name}, {"passed", x.passed}});
  return out;
}

inline void finish(ExperimentResult& r, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  r.status = kExitOk;
  for (const auto& v : r.verdicts) {
    if (!v.passed) r.status = kExitVerdict;
  }
  r.summary["name"] = cfg.name;
  r.summary["kind"] = std::string(to_string(cfg.kind));
  r.summary["seed"] = static_cast<std::int64_t>(cfg.seed);
  r.summary["status"] = r.status;
  r.summary["passed"] = r.passed();
  r.summary["verdicts"] = verdicts_json(r.verdicts);
  r.summary["notices"] = r.notices;
  r.files.push_back("summary.json");
  r.summary["files"] = r.files;
  atomic_write(dir / "summary.json", dump(r.summary));
}

/// Random unit directions with |w_1|, |w_2| >= 0.1 so the sign identities
/// have signal; odd entries lie in the (e_1, e_2) plane with ||w_1| - |w_2||
/// >= 0.1 as well.
inline std::vector<Vec> sign_test_directions(int d, int count, std::uint64_t seed) {
  Rng rng(seed, 0x5167);
  std::vector<Vec> out;
  while (static_cast<int>(out.size()) < count) {
    const bool planar = out.size() % 2 == 1;
    Vec w = Vec::Zero(d);
    for (int c = 0; c < (planar ? 2 : d); ++c) w[c] = rng.normal();
    if (w.squaredNorm() == 0.0) continue;
    w.normalize();
    if (std::abs(w[0]) < 0.1 || std::abs(w[1]) < 0.1) continue;
    if (planar && std::abs(std::abs(w[0]) - std::abs(w[1])) < 0.1) continue;
    out.push_back(w);
  }
  return out;
}

inline ExperimentResult run_xor(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  ExperimentResult r;
  const XorConfig xc{cfg.xor_run.d, cfg.xor_run.n_samples, cfg.seed};
  atomic_write(dir / "config.toml", config_to_toml(cfg));
  r.files.push_back("config.toml");

  Json report;
  const auto ex = verify_xor_extremals(xc, cfg.xor_run.random_directions);
  report["extremals"] = to_json(ex);
  r.verdicts.push_back({"xor-four-extremals", ex.passed()});

  if (cfg.xor_run.quadrature_directions > 0) {
    const auto q = compare_quadrature(xc, cfg.xor_run.quadrature_directions);
    Json rows = Json::array();
    int agree = 0;
    for (const auto& row : q) {
      rows.push_back(to_json(row));
      agree += row.agrees;
    }
    report["quadrature"] = {{"directions", q.size()}, {"agree", agree}, {"rows", rows}};
    r.verdicts.push_back({"xor-quadrature-agreement", agree == static_cast<int>(q.size())});
  }

  if (cfg.xor_run.sign_directions > 0) {
    const auto ws = sign_test_directions(xc.d, cfg.xor_run.sign_directions, cfg.seed);
    auto est = population_gradients_mc(ws, xc);
    Json rows = Json::array();
    bool all = true;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const auto s = detail::sign_structure_from(ws[i], std::move(est[i]));
      all = all && s.all_hold();
      rows.push_back(to_json(s));
    }
    report["sign_identities"] = {{"directions", ws.size()}, {"all_hold", all}, {"rows", rows}};
    r.verdicts.push_back({"xor-sign-identities", all});
  }
  atomic_write(dir / "xor.json", dump(report));
  r.files.push_back("xor.json");
  r.summary["extremal_count"] = ex.extremal_count();
  finish(r, cfg, dir);
  return r;
}

inline ExperimentResult run_training(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  ExperimentResult r;
  const Dataset ds = build_dataset(cfg.dataset, cfg.seed);
  const LossModel& loss = cfg.train.loss;
  const double gamma = cfg.train.gamma;
  atomic_write(dir / "config.toml", config_to_toml(cfg));
  r.files.push_back("config.toml");

  NetworkState state = init_network(cfg.init, ds.d());
  const Trace trace = train(state, ds, cfg.train, cfg.init);
  atomic_write(dir / "trace.csv", trace_csv(trace));
  r.files.push_back("trace.csv");

  if (cfg.output.neuron_csv) {
    ZeroSubgradients subgrad(ds, loss, gamma);
    atomic_write(dir / "neurons.csv", neuron_csv(trace, subgrad.fully_active(), cfg.output.neuron_csv_every));
    r.files.push_back("neurons.csv");
  }

  std::optional<Vec> beta;
  try {
    beta = ols_estimator(ds).beta;
  } catch (const RankDeficientError&) {
    if (cfg.diagnostics.spurious) throw;
    r.notices.push_back("OLS fit unavailable (rank-deficient data); overlay omitted");
  }

  std::optional<PhaseReport> phases;
  if (ds.d() == 2) {
    const auto& g = cfg.diagnostics;
    const auto constants = compute_constants(ds, loss, gamma, g.alpha_0, g.epsilon);
    atomic_write(dir / "constants.json", dump(to_json(constants, cfg.init.lambda)));
    r.files.push_back("constants.json");
    if (g.phases) {
      phases = detect_phases(trace, ds, constants, g.epsilon, g.eps_2, g.eps_3);
      atomic_write(dir / "phases.json", dump(to_json(*phases)));
      r.files.push_back("phases.json");
      const bool ordered = phases->tau && phases->tau_2 && phases->tau_3 && *phases->tau < *phases->tau_2 &&
                           *phases->tau_2 < *phases->tau_3;
      r.verdicts.push_back({"phase-order", ordered});
      r.verdicts.push_back({"frozen-neurons", phases->frozen_violations == 0});
    }
  } else if (cfg.diagnostics.phases) {
    r.notices.push_back("phase detection needs the exact d = 2 constants; skipped for d = " +
                        std::to_string(ds.d()));
  }

  if (cfg.diagnostics.spurious) {
    double loss_star = 0.0;
    for (int k = 0; k < ds.n(); ++k) loss_star += loss.value(beta->dot(ds.x(k)), ds.y(k));
    loss_star /= ds.n();
    const auto sp = verify_spurious_convergence(trace, ds, cfg.diagnostics.tol_residual,
                                                cfg.diagnostics.tol_loss * loss_star);
    atomic_write(dir / "spurious.json", dump(to_json(sp)));
    r.files.push_back("spurious.json");
    r.verdicts.push_back({"spurious-convergence", sp.passed()});
  }

  std::vector<std::string> notices;
  const auto picks = select_snapshots(trace, cfg.output.figure_times, phases ? &*phases : nullptr, notices);
  r.notices.insert(r.notices.end(), notices.begin(), notices.end());
  if (cfg.output.snapshots_json && !picks.empty()) {
    atomic_write(dir / "snapshots.json", dump(snapshots_to_json(trace, ds, picks)));
    r.files.push_back("snapshots.json");
  }
  emit_figures(trace, ds, picks, beta, dir, r.files, r.notices);

  const auto& last = trace.last();
  r.summary["steps"] = last.step;
  r.summary["final_time"] = last.time;
  r.summary["final_loss"] = number(last.loss);
  r.summary["stop_reason"] = std::string(to_string(trace.stop_reason));
  r.summary["balancedness_drift"] = number(balancedness_drift(trace));
  r.summary["max_step_loss_increase"] = number(trace.max_step_loss_increase);
  r.summary["snapshots"] = trace.snapshots.size();
  finish(r, cfg, dir);
  return r;
}

}  // namespace detail

/// Runs one experiment and writes its artifacts into `dir`. The status is
/// kExitOk iff every enabled verdict passes; errors propagate as exceptions.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  return cfg.kind == ExperimentKind::xor_population ? detail::run_xor(cfg, dir) : detail::run_training(cfg, dir);
}

}  // namespace alignlab
