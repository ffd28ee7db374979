#pragma once

#include "alignlab/core.hpp"
#include "alignlab/dataset.hpp"
#include "alignlab/loss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace alignlab {

// ---------------------------------------------------------------------------
// Initialisation
// ---------------------------------------------------------------------------

enum class InitMode { balanced, dominated };
enum class WeightDistribution { uniform_ball, gaussian_normalised };

inline std::string_view to_string(InitMode m) { return m == InitMode::balanced ? "balanced" : "dominated"; }
inline std::string_view to_string(WeightDistribution w) {
  return w == WeightDistribution::uniform_ball ? "uniform-ball" : "gaussian-normalised";
}

inline InitMode parse_init_mode(std::string_view s) {
  if (s == "balanced") return InitMode::balanced;
  if (s == "dominated") return InitMode::dominated;
  throw ConfigError("unknown init mode: " + std::string(s));
}

inline WeightDistribution parse_weight_distribution(std::string_view s) {
  if (s == "uniform-ball") return WeightDistribution::uniform_ball;
  if (s == "gaussian-normalised") return WeightDistribution::gaussian_normalised;
  throw ConfigError("unknown weight distribution: " + std::string(s));
}

struct InitConfig {
  double lambda = 1e-3;
  int m = 2000;
  InitMode mode = InitMode::balanced;
  double dominated_margin = 0.0;
  double positive_fraction = 0.5;  // probability that a_j > 0
  std::uint64_t seed = 0;
  WeightDistribution w_distribution = WeightDistribution::gaussian_normalised;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("init.lambda must be positive");
    if (m < 1) throw ConfigError("init.m must be at least 1");
    if (!(dominated_margin >= 0.0)) throw ConfigError("init.dominated_margin must be nonnegative");
    if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
      throw ConfigError("init.positive_fraction must lie in [0, 1]");
    }
  }

  friend bool operator==(const InitConfig&, const InitConfig&) = default;
};

struct NetworkState {
  Vec a;
  RowMat w;  // m x d, row j is w_j
  double t = 0.0;
  std::int64_t step_count = 0;

  int m() const { return static_cast<int>(a.size()); }
  int d() const { return static_cast<int>(w.cols()); }

  friend bool operator==(const NetworkState& x, const NetworkState& y) {
    return x.a == y.a && x.w == y.w && x.t == y.t && x.step_count == y.step_count;
  }
};

/// (a_j, w_j) = (lambda / sqrt(m)) (a~_j, w~_j) with |a~_j| >= ||w~_j|| and
/// a~_j^2 <= 1, so every running mean of a~^2 stays below 1.
///
/// balanced: |a~_j| = ||w~_j||, with w~_j uniform in the unit ball or on the
/// unit sphere. dominated: |a~_j| = 1 and ||w~_j|| <= 1 / (1 + margin).
inline NetworkState init_network(const InitConfig& cfg, int d) {
  cfg.validate();
  if (d < 1) throw ConfigError("dimension must be at least 1");
  Rng rng(cfg.seed, 0x1417);
  NetworkState s;
  s.a.resize(cfg.m);
  s.w.resize(cfg.m, d);
  const double scale = cfg.lambda / std::sqrt(static_cast<double>(cfg.m));
  for (int j = 0; j < cfg.m; ++j) {
    Vec g(d);
    double norm = 0.0;
    do {
      for (int i = 0; i < d; ++i) g[i] = rng.normal();
      norm = g.norm();
    } while (norm == 0.0);
    g /= norm;
    double radius = 1.0;
    if (cfg.w_distribution == WeightDistribution::uniform_ball) {
      radius = std::pow(rng.uniform_left_open(0.0, 1.0), 1.0 / d);
    }
    const double sign = rng.uniform() < cfg.positive_fraction ? 1.0 : -1.0;
    if (cfg.mode == InitMode::dominated) radius /= 1.0 + cfg.dominated_margin;
    s.w.row(j) = scale * radius * g.transpose();
    // balanced: |a_j| is the norm of the stored row
    s.a[j] = sign * (cfg.mode == InitMode::balanced ? s.w.row(j).norm() : scale);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward pass and gradient field
// ---------------------------------------------------------------------------

inline double leaky_relu(double z, double gamma) { return z > 0.0 ? z : gamma * z; }

/// Clarke selection of sigma'(z): 1 above zero, gamma below, and gamma at
/// zero (0 for ReLU).
inline double leaky_relu_slope(double z, double gamma) { return z > 0.0 ? 1.0 : gamma; }

inline double forward(const NetworkState& s, const Vec& x, double gamma) {
  if (x.size() != s.d()) throw Error("input dimension does not match the network");
  double h = 0.0;
  for (int j = 0; j < s.m(); ++j) h += s.a[j] * leaky_relu(s.w.row(j).dot(x), gamma);
  return h;
}

inline Vec predictions(const NetworkState& s, const Dataset& ds, double gamma) {
  Vec h(ds.n());
  for (int k = 0; k < ds.n(); ++k) h[k] = forward(s, ds.x(k), gamma);
  return h;
}

inline double training_loss(const NetworkState& s, const Dataset& ds, const LossModel& loss, double gamma) {
  double total = 0.0;
  for (int k = 0; k < ds.n(); ++k) total += loss.value(forward(s, ds.x(k), gamma), ds.y(k));
  return total / ds.n();
}

struct Field {
  Vec da;
  RowMat dw;

  double norm() const { return std::sqrt(da.squaredNorm() + dw.squaredNorm()); }
};

/// Descent field of the training loss: dw_j = a_j D_j, da_j = <w_j, D_j>
/// with D_j = -(1/n) sum_k sigma'(<w_j, x_k>) dl(h(x_k), y_k) x_k.
inline Field gradient_field(const NetworkState& s, const Dataset& ds, const LossModel& loss, double gamma) {
  if (ds.d() != s.d()) throw Error("dataset dimension does not match the network");
  const Vec h = predictions(s, ds, gamma);
  Vec r(ds.n());
  for (int k = 0; k < ds.n(); ++k) r[k] = -loss.derivative(h[k], ds.y(k)) / ds.n();
  Field f;
  f.da.resize(s.m());
  f.dw.resize(s.m(), s.d());
  for (int j = 0; j < s.m(); ++j) {
    Vec dj = Vec::Zero(s.d());
    for (int k = 0; k < ds.n(); ++k) {
      const double eta = leaky_relu_slope(s.w.row(j).dot(ds.features().row(k)), gamma);
      if (eta != 0.0) dj += eta * r[k] * ds.x(k);
    }
    f.dw.row(j) = s.a[j] * dj.transpose();
    f.da[j] = s.w.row(j).dot(dj);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr = 1e-3;
  std::int64_t max_steps = 1000;
  std::int64_t record_every = 24;
  std::int64_t dense_until = -1;  // last step of dense recording; -1 means the whole run
  std::int64_t sparse_every = 0;  // stride after dense_until; 0 means record_every
  double stop_grad_norm = 0.0;
  double gamma = 0.0;
  LossModel loss;
  std::int64_t full_snapshot_limit = 1000000;  // store full states while m*d stays below this

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
    if (max_steps < 0) throw ConfigError("train.max_steps must be nonnegative");
    if (record_every < 1) throw ConfigError("train.record_every must be at least 1");
    if (sparse_every < 0) throw ConfigError("train.sparse_every must be nonnegative");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("train.gamma must lie in [0, 1]");
    if (!(stop_grad_norm >= 0.0)) throw ConfigError("train.stop_grad_norm must be nonnegative");
  }

  bool records(std::int64_t step) const {
    if (dense_until < 0 || step <= dense_until) return step % record_every == 0;
    return step % (sparse_every > 0 ? sparse_every : record_every) == 0;
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct NeuronSummary {
  Vec a;
  Vec w_norm;
  RowMat w_dir;  // unit rows; zero rows stay zero
};

struct Snapshot {
  std::int64_t step = 0;
  double time = 0.0;
  double loss = 0.0;
  double sum_a2_pos = 0.0;
  double sum_a2_neg = 0.0;
  double max_balance_drift = 0.0;
  double grad_norm = 0.0;
  std::optional<NetworkState> state;
  std::optional<NeuronSummary> summary;

  const Vec& a() const { return state ? state->a : summary->a; }

  /// The recorded state; rebuilt from norms and directions for summaries.
  NetworkState network() const {
    if (state) return *state;
    NetworkState s;
    s.a = summary->a;
    s.w = summary->w_dir;
    for (int j = 0; j < s.m(); ++j) s.w.row(j) *= summary->w_norm[j];
    s.t = time;
    s.step_count = step;
    return s;
  }
};

enum class StopReason { max_steps, grad_norm };

inline std::string_view to_string(StopReason r) { return r == StopReason::max_steps ? "max-steps" : "grad-norm"; }

struct Trace {
  std::optional<InitConfig> init;
  TrainConfig config;
  std::vector<Snapshot> snapshots;
  Vec initial_balance;  // a_j^2 - ||w_j||^2 at step 0
  double max_step_loss_increase = 0.0;
  StopReason stop_reason = StopReason::max_steps;

  const Snapshot& last() const { return snapshots.back(); }
};

/// Divergence guard: loss above this multiple of the initial loss aborts.
inline constexpr double kDivergenceFactor = 1e6;

namespace detail {

template <int D>
class EulerKernel {
 public:
  EulerKernel(NetworkState& s, const Dataset& ds, const TrainConfig& cfg)
      : s_(s), ds_(ds), cfg_(cfg), m_(s.m()), n_(ds.n()), d_(D > 0 ? D : s.d()), x_(ds.features()),
        pre_(static_cast<std::size_t>(m_) * n_), r_(static_cast<std::size_t>(n_)), h_(static_cast<std::size_t>(n_)),
        dir_(static_cast<std::size_t>(m_) * d_), da_(static_cast<std::size_t>(m_)),
        active_(static_cast<std::size_t>(m_)) {}

  /// Forward pass at the current state; returns the loss and fills the
  /// residual weights r_k = -dl(h(x_k), y_k) / n.
  double evaluate() {
    const double gamma = cfg_.gamma;
    std::fill(h_.begin(), h_.end(), 0.0);
    for (int j = 0; j < m_; ++j) {
      const double* w = s_.w.data() + static_cast<std::ptrdiff_t>(j) * d_;
      double* pre = pre_.data() + static_cast<std::ptrdiff_t>(j) * n_;
      const double a = s_.a[j];
      for (int k = 0; k < n_; ++k) {
        double z = 0.0;
        for (int i = 0; i < d_; ++i) z += w[i] * x_(k, i);
        pre[k] = z;
        h_[static_cast<std::size_t>(k)] += a * (z > 0.0 ? z : gamma * z);
      }
    }
    double loss = 0.0;
    for (int k = 0; k < n_; ++k) {
      const double hk = h_[static_cast<std::size_t>(k)];
      loss += cfg_.loss.value(hk, ds_.y(k));
      r_[static_cast<std::size_t>(k)] = -cfg_.loss.derivative(hk, ds_.y(k)) / n_;
    }
    return loss / n_;
  }

  /// D_j for every neuron from the last evaluate(); returns the field norm.
  double compute_field() {
    const double gamma = cfg_.gamma;
    double field_sq = 0.0;
    for (int j = 0; j < m_; ++j) {
      const double* pre = pre_.data() + static_cast<std::ptrdiff_t>(j) * n_;
      double* dj = dir_.data() + static_cast<std::ptrdiff_t>(j) * d_;
      for (int i = 0; i < d_; ++i) dj[i] = 0.0;
      bool any = false;
      for (int k = 0; k < n_; ++k) {
        const double eta = pre[k] > 0.0 ? 1.0 : gamma;
        if (eta == 0.0) continue;
        any = true;
        const double c = eta * r_[static_cast<std::size_t>(k)];
        for (int i = 0; i < d_; ++i) dj[i] += c * x_(k, i);
      }
      active_[static_cast<std::size_t>(j)] = any;
      if (!any) {
        da_[static_cast<std::size_t>(j)] = 0.0;
        continue;
      }
      const double* w = s_.w.data() + static_cast<std::ptrdiff_t>(j) * d_;
      const double a = s_.a[j];
      double da = 0.0;
      double dsq = 0.0;
      for (int i = 0; i < d_; ++i) {
        da += w[i] * dj[i];
        dsq += dj[i] * dj[i];
      }
      da_[static_cast<std::size_t>(j)] = da;
      field_sq += da * da + a * a * dsq;
    }
    return std::sqrt(field_sq);
  }

  /// theta += lr * field. Neurons with no active point keep their exact bits.
  void apply(double lr) {
    for (int j = 0; j < m_; ++j) {
      if (!active_[static_cast<std::size_t>(j)]) continue;
      double* w = s_.w.data() + static_cast<std::ptrdiff_t>(j) * d_;
      const double* dj = dir_.data() + static_cast<std::ptrdiff_t>(j) * d_;
      const double a = s_.a[j];
      for (int i = 0; i < d_; ++i) w[i] += lr * (a * dj[i]);
      s_.a[j] = a + lr * da_[static_cast<std::size_t>(j)];
    }
  }

 private:
  NetworkState& s_;
  const Dataset& ds_;
  const TrainConfig& cfg_;
  int m_;
  int n_;
  int d_;
  const Mat& x_;
  std::vector<double> pre_;
  std::vector<double> r_;
  std::vector<double> h_;
  std::vector<double> dir_;
  std::vector<double> da_;
  std::vector<char> active_;
};

inline Vec balance(const NetworkState& s) {
  Vec b(s.m());
  for (int j = 0; j < s.m(); ++j) b[j] = s.a[j] * s.a[j] - s.w.row(j).squaredNorm();
  return b;
}

inline Snapshot make_snapshot(const NetworkState& s, double loss, double grad_norm, const Vec& b0,
                              const TrainConfig& cfg) {
  Snapshot snap;
  snap.step = s.step_count;
  snap.time = s.t;
  snap.loss = loss;
  snap.grad_norm = grad_norm;
  for (int j = 0; j < s.m(); ++j) {
    const double a2 = s.a[j] * s.a[j];
    if (s.a[j] > 0.0) {
      snap.sum_a2_pos += a2;
    } else if (s.a[j] < 0.0) {
      snap.sum_a2_neg += a2;
    }
    const double bj = a2 - s.w.row(j).squaredNorm();
    snap.max_balance_drift = std::max(snap.max_balance_drift, std::abs(bj - b0[j]));
  }
  if (static_cast<std::int64_t>(s.m()) * s.d() <= cfg.full_snapshot_limit) {
    snap.state = s;
  } else {
    NeuronSummary sum;
    sum.a = s.a;
    sum.w_norm = s.w.rowwise().norm();
    sum.w_dir = s.w;
    for (int j = 0; j < s.m(); ++j) {
      if (sum.w_norm[j] > 0.0) sum.w_dir.row(j) /= sum.w_norm[j];
    }
    snap.summary = std::move(sum);
  }
  return snap;
}

template <int D>
Trace run_euler(NetworkState& s, const Dataset& ds, const TrainConfig& cfg) {
  Trace trace;
  trace.config = cfg;
  trace.initial_balance = balance(s);
  EulerKernel<D> kernel(s, ds, cfg);
  const std::int64_t first = s.step_count;
  double loss = kernel.evaluate();
  const double loss0 = loss;
  for (std::int64_t done = 0;; ++done) {
    const double grad = kernel.compute_field();
    const bool stop_grad = grad < cfg.stop_grad_norm;
    const bool last = done == cfg.max_steps || stop_grad;
    if (last || cfg.records(s.step_count - first)) {
      trace.snapshots.push_back(make_snapshot(s, loss, grad, trace.initial_balance, cfg));
    }
    if (last) {
      trace.stop_reason = stop_grad ? StopReason::grad_norm : StopReason::max_steps;
      break;
    }
    kernel.apply(cfg.lr);
    ++s.step_count;
    s.t = static_cast<double>(s.step_count) * cfg.lr;
    const double next = kernel.evaluate();
    if (!std::isfinite(next) || next > kDivergenceFactor * std::max(loss0, 1e-300)) {
      throw DivergenceError("loss " + std::to_string(next) + " exceeded " + std::to_string(kDivergenceFactor) +
                                "x the initial loss at step " + std::to_string(s.step_count) + "; lr too large?",
                            s.step_count);
    }
    trace.max_step_loss_increase = std::max(trace.max_step_loss_increase, next - loss);
    loss = next;
  }
  return trace;
}

}  // namespace detail

/// Explicit Euler integration of the gradient flow, theta += lr * field,
/// with flow time t = steps * lr. Snapshots are taken at step 0, on the
/// record stride, and at the final step.
inline Trace train(NetworkState& s, const Dataset& ds, const TrainConfig& cfg,
                   std::optional<InitConfig> init = std::nullopt) {
  cfg.validate();
  if (ds.d() != s.d()) throw ConfigError("dataset dimension does not match the network");
  Trace trace;
  switch (s.d()) {
    case 1: trace = detail::run_euler<1>(s, ds, cfg); break;
    case 2: trace = detail::run_euler<2>(s, ds, cfg); break;
    case 3: trace = detail::run_euler<3>(s, ds, cfg); break;
    default: trace = detail::run_euler<0>(s, ds, cfg); break;
  }
  trace.init = std::move(init);
  return trace;
}

/// max over neurons and snapshots of |b_j(t) - b_j(0)|, b_j = a_j^2 - ||w_j||^2.
inline double balancedness_drift(const Trace& trace) {
  double drift = 0.0;
  for (const auto& s : trace.snapshots) drift = std::max(drift, s.max_balance_drift);
  return drift;
}

}  // namespace alignlab
