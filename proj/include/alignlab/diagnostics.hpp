#pragma once

#include "alignlab/core.hpp"
#include "alignlab/data.hpp"
#include "alignlab/dataset.hpp"
#include "alignlab/dynamics.hpp"
#include "alignlab/geometry.hpp"
#include "alignlab/loss.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace alignlab {

// ---------------------------------------------------------------------------
// Neuron sets
// ---------------------------------------------------------------------------

/// I: a_j > 0 and some <w_j, x_k> > 0. N: a_j < 0. rest: a_j > 0 and
/// inactive on every point. degenerate: a_j = 0.
struct NeuronClassification {
  std::vector<int> positive;
  std::vector<int> negative;
  std::vector<int> rest;
  std::vector<int> degenerate;

  friend bool operator==(const NeuronClassification&, const NeuronClassification&) = default;
};

inline bool activated_somewhere(const NetworkState& s, int j, const Dataset& ds) {
  for (int k = 0; k < ds.n(); ++k) {
    if (s.w.row(j).dot(ds.features().row(k)) > 0.0) return true;
  }
  return false;
}

inline NeuronClassification classify_neurons(const NetworkState& state0, const Dataset& ds) {
  if (state0.d() != ds.d()) throw ConfigError("dataset dimension does not match the network");
  NeuronClassification c;
  for (int j = 0; j < state0.m(); ++j) {
    if (state0.a[j] < 0.0) {
      c.negative.push_back(j);
    } else if (state0.a[j] == 0.0) {
      c.degenerate.push_back(j);
    } else if (activated_somewhere(state0, j, ds)) {
      c.positive.push_back(j);
    } else {
      c.rest.push_back(j);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Per-neuron subgradients at theta = 0
// ---------------------------------------------------------------------------

/// D(w, 0) memoised by activation pattern.
class ZeroSubgradients {
 public:
  ZeroSubgradients(const Dataset& ds, const LossModel& loss, double gamma)
      : ds_(ds), gamma_(gamma), coeffs_(zero_output_coefficients(ds, loss)),
        zero_tol_(subgradient_zero_tolerance(ds, coeffs_)) {}

  const Vec& at(const Vec& w) {
    auto u = activation_pattern(w, ds_);
    auto it = cache_.find(u);
    if (it == cache_.end()) {
      Vec d = min_norm_subgradient(u, coeffs_, ds_, gamma_).vector;
      if (d.norm() <= zero_tol_) d.setZero();
      it = cache_.emplace(std::move(u), std::move(d)).first;
    }
    return it->second;
  }

  /// D* = -(1/n) sum_k dl(0, y_k) x_k, the subgradient of the fully active cone.
  Vec fully_active() const {
    Vec d = Vec::Zero(ds_.d());
    for (int k = 0; k < ds_.n(); ++k) d -= coeffs_[k] * ds_.x(k) / ds_.n();
    return d;
  }

 private:
  const Dataset& ds_;
  double gamma_;
  Vec coeffs_;
  double zero_tol_;
  std::map<ActivationPattern, Vec> cache_;
};

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

enum class AlignmentStatus { aligned_positive, anti_proportional, dead, unresolved };

inline std::string_view to_string(AlignmentStatus s) {
  switch (s) {
    case AlignmentStatus::aligned_positive: return "aligned-positive";
    case AlignmentStatus::anti_proportional: return "anti-proportional";
    case AlignmentStatus::dead: return "dead";
    case AlignmentStatus::unresolved: return "unresolved";
  }
  return "unresolved";
}

struct AlignmentScore {
  int neuron = 0;
  Vec D;                // D(w_j, 0)
  double inner = 0.0;   // <D, w_j / a_j>
  double cosine = 0.0;  // cos(w_j, assigned extremal)
  int extremal = -1;    // index into the extremal list; -1 when none is assigned
  AlignmentStatus status = AlignmentStatus::unresolved;
};

inline constexpr double kDefaultAlignTol = 0.01;

/// Scores every neuron with a_j != 0. The assigned extremal is the one
/// whose D is closest in |cos| to w_j; with an empty list D(w_j, 0) itself
/// is the reference.
inline std::vector<AlignmentScore> alignment_scores(const NetworkState& s, const Dataset& ds, const LossModel& loss,
                                                    double gamma, const std::vector<ExtremalVector>& extremals,
                                                    double align_tol = kDefaultAlignTol) {
  if (s.d() != ds.d()) throw ConfigError("dataset dimension does not match the network");
  ZeroSubgradients subgrad(ds, loss, gamma);
  std::vector<AlignmentScore> out;
  for (int j = 0; j < s.m(); ++j) {
    if (s.a[j] == 0.0) continue;
    const Vec w = s.w.row(j).transpose();
    AlignmentScore sc;
    sc.neuron = j;
    sc.D = subgrad.at(w);
    sc.inner = sc.D.dot(w) / s.a[j];
    if (sc.D.squaredNorm() == 0.0) {
      sc.status = AlignmentStatus::dead;
      out.push_back(std::move(sc));
      continue;
    }
    Vec reference = sc.D;
    double best = -1.0;
    for (std::size_t e = 0; e < extremals.size(); ++e) {
      const double c = std::abs(cosine(w, extremals[e].D));
      if (c > best) {
        best = c;
        sc.extremal = static_cast<int>(e);
        reference = extremals[e].D;
      }
    }
    sc.cosine = cosine(w, reference);
    if (sc.cosine >= 1.0 - align_tol) {
      sc.status = AlignmentStatus::aligned_positive;
    } else if (sc.cosine <= -1.0 + align_tol && cosine(sc.D, reference) >= 1.0 - align_tol) {
      sc.status = AlignmentStatus::anti_proportional;
    }
    out.push_back(std::move(sc));
  }
  return out;
}

/// Screening of the initial neurons for the alignment theorem.
struct ConditionScreen {
  std::vector<char> passes;  // point 1 per neuron
  int screened = 0;          // neurons with a_j != 0 and D(w_j, 0) != 0
  double pass_fraction = 0.0;  // over screened neurons
  bool point2_by_construction = true;  // sigma'(0) = 0 makes w_j = 0 stationary
  std::string note;
};

/// Point 1: <D(w_j, 0), w_j / a_j> > -sqrt(1 - alpha_0^2) ||D(w_j, 0)||.
inline ConditionScreen check_condition_neurons(const NetworkState& state0, const Dataset& ds, const LossModel& loss,
                                               double gamma, double alpha_0) {
  if (!(alpha_0 > 0.0 && alpha_0 <= 1.0)) throw ConfigError("alpha_0 must lie in (0, 1]");
  if (state0.d() != ds.d()) throw ConfigError("dataset dimension does not match the network");
  ZeroSubgradients subgrad(ds, loss, gamma);
  ConditionScreen out;
  out.passes.assign(static_cast<std::size_t>(state0.m()), 0);
  const double bound = std::sqrt(1.0 - alpha_0 * alpha_0);
  int count = 0;
  for (int j = 0; j < state0.m(); ++j) {
    if (state0.a[j] == 0.0) continue;
    const Vec w = state0.w.row(j).transpose();
    const Vec& d = subgrad.at(w);
    const bool ok = d.dot(w) / state0.a[j] > -bound * d.norm();
    out.passes[static_cast<std::size_t>(j)] = ok;
    count += ok;
    out.screened += d.squaredNorm() > 0.0;
  }
  out.pass_fraction = out.screened > 0 ? static_cast<double>(count) / out.screened : 0.0;
  out.note = "point 2 holds by the fixed selection sigma'(0) = 0";
  return out;
}

/// R = 1/2 sum of ||w_i||^2 over neurons with both a positive and a negative
/// preactivation on the data.
inline double mixed_sign_mass(const NetworkState& s, const Dataset& ds) {
  double r = 0.0;
  for (int j = 0; j < s.m(); ++j) {
    bool pos = false;
    bool neg = false;
    for (int k = 0; k < ds.n(); ++k) {
      const double z = s.w.row(j).dot(ds.features().row(k));
      pos = pos || z > 0.0;
      neg = neg || z < 0.0;
    }
    if (pos && neg) r += 0.5 * s.w.row(j).squaredNorm();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

struct Quantiles {
  double min = kInf;
  double q05 = kInf;
  double q50 = kInf;
  double q95 = kInf;
  double max = -kInf;
  int count = 0;
};

inline Quantiles quantiles(std::vector<double> v) {
  Quantiles q;
  q.count = static_cast<int>(v.size());
  if (v.empty()) return q;
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  q.min = v.front();
  q.q05 = at(0.05);
  q.q50 = at(0.5);
  q.q95 = at(0.95);
  q.max = v.back();
  return q;
}

/// Statistics at the first snapshot with time >= tau.
struct AlignmentPhaseStats {
  double time = 0.0;
  Quantiles cosine_to_d_star;        // over I
  double min_inner_ratio = kInf;     // min over I of <D*, w/a> / ||D*||
  double min_growth_ratio = kInf;    // min_j |a_j^tau| / |a_j^0|
  double max_growth_ratio = 0.0;     // max_j |a_j^tau| / |a_j^0|
  double growth_low = 0.0;           // lambda^{2 eps}
  double growth_high = 0.0;          // lambda^{-2 eps}
  int growth_violations = 0;
  double max_norm_ratio = 0.0;       // max_j ||w_j|| / |a_j|
  int negative_violations = 0;       // i in N with a^tau outside [a^0, 0]
};

/// Statistics at tau_2.
struct GrowthPhaseStats {
  double time = 0.0;
  double positive_mass = 0.0;         // sum_{I} a_i^2
  double min_correlation = kInf;      // min over I, k of <w_i / ||w_i||, x_k>
  double min_pairwise_cosine = kInf;  // over I
  int negative_violations = 0;
};

/// Statistics at tau_3.
struct RegressionPhaseStats {
  double time = 0.0;
  double beta_gap = kInf;             // ||beta* - sum_I a_i w_i||
  double min_correlation = kInf;      // min over I, k of <w_i / a_i, x_k>
  double min_pairwise_cosine = kInf;
  int negative_violations = 0;        // i in N with a^tau3 outside (a^0 lambda^-eps, 0]
};

struct TimedValue {
  double time = 0.0;
  double value = 0.0;
};

struct PhaseReport {
  double epsilon = 0.0;
  double eps_2 = 0.0;
  double eps_3 = 0.0;
  double lambda = 0.0;
  double tau_theory = 0.0;  // -eps ln(lambda) / D_max
  std::optional<double> tau;
  std::optional<double> tau_2;
  std::optional<double> tau_3;
  NeuronClassification classification;
  std::optional<AlignmentPhaseStats> at_tau;
  std::optional<GrowthPhaseStats> at_tau_2;
  std::optional<RegressionPhaseStats> at_tau_3;
  std::vector<TimedValue> mixed_mass;
  double negative_mass_max_increase = 0.0;  // over consecutive snapshots before tau_2
  int frozen_violations = 0;                // rest neurons that moved
  bool record_stride_ok = true;
  std::vector<std::string> warnings;
};

namespace detail {

inline double min_pairwise_cosine(const NetworkState& s, const std::vector<int>& idx) {
  std::vector<Vec> dirs;
  dirs.reserve(idx.size());
  for (int i : idx) dirs.push_back(s.w.row(i).transpose().normalized());
  double best = kInf;
  for (std::size_t p = 0; p < dirs.size(); ++p) {
    for (std::size_t q = p + 1; q < dirs.size(); ++q) best = std::min(best, dirs[p].dot(dirs[q]));
  }
  return best;
}

inline Vec positive_aggregate(const NetworkState& s, const std::vector<int>& idx) {
  Vec b = Vec::Zero(s.d());
  for (int i : idx) b += s.a[i] * s.w.row(i).transpose();
  return b;
}

inline double output_mass(const Snapshot& snap, const std::vector<int>& idx) {
  const Vec& a = snap.a();
  double total = 0.0;
  for (int i : idx) total += a[i] * a[i];
  return total;
}

}  // namespace detail

/// Phase boundaries resolved on the recorded snapshots. tau_2 is the first
/// snapshot at or after tau with sum_I a_i^2 >= eps_2, tau_3 the first at or
/// after tau_2 with ||beta* - sum_I a_i w_i|| <= eps_3.
inline PhaseReport detect_phases(const Trace& trace, const Dataset& ds, const AlignmentConstants& constants,
                                 double epsilon, double eps_2, double eps_3) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(eps_2 > 0.0) || !(eps_3 > 0.0)) throw ConfigError("eps_2 and eps_3 must be positive");
  if (trace.snapshots.empty()) throw ConfigError("trace has no snapshots");
  if (!trace.init) throw ConfigError("trace does not carry its initialisation config");
  const auto& snaps = trace.snapshots;
  const double lr = trace.config.lr;

  PhaseReport r;
  r.epsilon = epsilon;
  r.eps_2 = eps_2;
  r.eps_3 = eps_3;
  r.lambda = trace.init->lambda;
  r.tau_theory = constants.tau(epsilon, r.lambda);

  const NetworkState s0 = snaps.front().network();
  r.classification = classify_neurons(s0, ds);
  const auto& cls = r.classification;

  const std::int64_t stride_limit = static_cast<std::int64_t>(std::floor(r.tau_theory / (100.0 * lr)));
  if (trace.config.record_every > stride_limit) {
    r.record_stride_ok = false;
    r.warnings.push_back("record_every " + std::to_string(trace.config.record_every) + " exceeds tau/(100 lr) = " +
                         std::to_string(stride_limit) + "; phase times are coarse");
  }

  for (const auto& snap : snaps) r.mixed_mass.push_back({snap.time, mixed_sign_mass(snap.network(), ds)});

  for (const auto& snap : snaps) {
    const NetworkState s = snap.network();
    for (int j : cls.rest) {
      if (s.a[j] != s0.a[j] || s.w.row(j) != s0.w.row(j)) {
        ++r.frozen_violations;
        break;
      }
    }
  }

  // tau
  const double time_tol = 0.5 * lr;
  std::size_t i_tau = snaps.size();
  for (std::size_t i = 0; i < snaps.size(); ++i) {
    if (snaps[i].time >= r.tau_theory - time_tol) {
      i_tau = i;
      break;
    }
  }
  if (i_tau == snaps.size()) {
    r.warnings.push_back("trace ends before tau");
    return r;
  }
  r.tau = snaps[i_tau].time;
  {
    const NetworkState s = snaps[i_tau].network();
    ZeroSubgradients subgrad(ds, trace.config.loss, trace.config.gamma);
    const Vec d_star = subgrad.fully_active();
    AlignmentPhaseStats st;
    st.time = s.t;
    st.growth_low = std::pow(r.lambda, 2.0 * epsilon);
    st.growth_high = std::pow(r.lambda, -2.0 * epsilon);
    std::vector<double> cos;
    for (int i : cls.positive) {
      const Vec w = s.w.row(i).transpose();
      cos.push_back(cosine(w, d_star));
      st.min_inner_ratio = std::min(st.min_inner_ratio, d_star.dot(w / s.a[i]) / d_star.norm());
    }
    st.cosine_to_d_star = quantiles(std::move(cos));
    for (int j = 0; j < s.m(); ++j) {
      if (s0.a[j] == 0.0) continue;
      const double g = std::abs(s.a[j]) / std::abs(s0.a[j]);
      st.min_growth_ratio = std::min(st.min_growth_ratio, g);
      st.max_growth_ratio = std::max(st.max_growth_ratio, g);
      if (g < st.growth_low || g > st.growth_high) ++st.growth_violations;
      if (s.a[j] != 0.0) st.max_norm_ratio = std::max(st.max_norm_ratio, s.w.row(j).norm() / std::abs(s.a[j]));
    }
    for (int i : cls.negative) {
      if (s.a[i] < s0.a[i] || s.a[i] > 0.0) ++st.negative_violations;
    }
    r.at_tau = st;
  }

  // tau_2
  std::size_t i_tau2 = snaps.size();
  for (std::size_t i = i_tau; i < snaps.size(); ++i) {
    if (detail::output_mass(snaps[i], cls.positive) >= eps_2) {
      i_tau2 = i;
      break;
    }
  }
  const std::size_t n_mass_end = std::min(i_tau2, snaps.size() - 1);
  for (std::size_t i = 1; i <= n_mass_end; ++i) {
    const double inc = detail::output_mass(snaps[i], cls.negative) - detail::output_mass(snaps[i - 1], cls.negative);
    r.negative_mass_max_increase = std::max(r.negative_mass_max_increase, inc);
  }
  if (i_tau2 == snaps.size()) {
    r.warnings.push_back("positive mass never reaches eps_2");
    return r;
  }
  r.tau_2 = snaps[i_tau2].time;
  {
    const NetworkState s = snaps[i_tau2].network();
    GrowthPhaseStats st;
    st.time = s.t;
    st.positive_mass = detail::output_mass(snaps[i_tau2], cls.positive);
    for (int i : cls.positive) {
      const Vec w = s.w.row(i).transpose().normalized();
      for (int k = 0; k < ds.n(); ++k) st.min_correlation = std::min(st.min_correlation, w.dot(ds.x(k)));
    }
    st.min_pairwise_cosine = detail::min_pairwise_cosine(s, cls.positive);
    for (int i : cls.negative) {
      if (s.a[i] < s0.a[i] || s.a[i] > 0.0) ++st.negative_violations;
    }
    r.at_tau_2 = st;
  }

  // tau_3
  const Vec beta_star = ols_estimator(ds).beta;
  std::size_t i_tau3 = snaps.size();
  for (std::size_t i = i_tau2; i < snaps.size(); ++i) {
    const NetworkState s = snaps[i].network();
    if ((beta_star - detail::positive_aggregate(s, cls.positive)).norm() <= eps_3) {
      i_tau3 = i;
      break;
    }
  }
  if (i_tau3 == snaps.size()) {
    r.warnings.push_back("positive aggregate never comes within eps_3 of the OLS estimator");
    return r;
  }
  r.tau_3 = snaps[i_tau3].time;
  {
    const NetworkState s = snaps[i_tau3].network();
    RegressionPhaseStats st;
    st.time = s.t;
    st.beta_gap = (beta_star - detail::positive_aggregate(s, cls.positive)).norm();
    for (int i : cls.positive) {
      const Vec w = s.w.row(i).transpose() / s.a[i];
      for (int k = 0; k < ds.n(); ++k) st.min_correlation = std::min(st.min_correlation, w.dot(ds.x(k)));
    }
    st.min_pairwise_cosine = detail::min_pairwise_cosine(s, cls.positive);
    const double low = std::pow(r.lambda, -epsilon);
    for (int i : cls.negative) {
      if (!(s.a[i] > s0.a[i] * low && s.a[i] <= 0.0)) ++st.negative_violations;
    }
    r.at_tau_3 = st;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Spurious convergence
// ---------------------------------------------------------------------------

struct Check {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
};

struct SpuriousReport {
  Vec beta_star;
  Vec residuals;  // h(x_k) - <beta*, x_k>
  double final_loss = 0.0;
  double loss_star = 0.0;
  bool interpolation_failed = false;
  bool linear_network = false;
  int mixed_neurons = 0;
  double mixed_mass = 0.0;
  std::vector<Check> checks;
  std::map<std::string, int> cone_histogram;  // final activation pattern -> neuron count
  std::string note;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
};

/// Mixed neurons at convergence carry mass below this in R.
inline constexpr double kMixedMassTol = 1e-6;

/// Verdicts on the final snapshot:
///   (i) max_k |h(x_k) - <beta*, x_k>| <= tol_residual;
///   (ii) |L - L(beta*)| <= tol_loss;
///   (iii) neurons with mixed signs on the data carry R <= 1e-6;
///   (iv) ||sum over fully active neurons of a_i w_i - beta*|| <= tol_residual;
///   (v) L > 10 tol_loss.
inline SpuriousReport verify_spurious_convergence(const Trace& trace, const Dataset& ds, double tol_residual,
                                                  double tol_loss) {
  if (trace.snapshots.empty()) throw ConfigError("trace has no snapshots");
  if (!(tol_residual > 0.0) || !(tol_loss > 0.0)) throw ConfigError("tolerances must be positive");
  const double gamma = trace.config.gamma;
  const NetworkState s = trace.last().network();
  const auto fit = ols_estimator(ds);
  SpuriousReport r;
  r.beta_star = fit.beta;
  r.loss_star = 0.0;
  for (int k = 0; k < ds.n(); ++k) r.loss_star += trace.config.loss.value(fit.beta.dot(ds.x(k)), ds.y(k));
  r.loss_star /= ds.n();
  r.final_loss = training_loss(s, ds, trace.config.loss, gamma);
  r.residuals.resize(ds.n());
  for (int k = 0; k < ds.n(); ++k) r.residuals[k] = forward(s, ds.x(k), gamma) - fit.beta.dot(ds.x(k));

  Vec active_sum = Vec::Zero(ds.d());
  for (int j = 0; j < s.m(); ++j) {
    const Vec w = s.w.row(j).transpose();
    const auto u = activation_pattern(w, ds);
    ++r.cone_histogram[u.to_string()];
    bool pos = false;
    bool neg = false;
    for (int k = 0; k < ds.n(); ++k) {
      const double z = w.dot(ds.x(k));
      pos = pos || z > 0.0;
      neg = neg || z < 0.0;
    }
    if (pos && neg) {
      ++r.mixed_neurons;
      r.mixed_mass += 0.5 * w.squaredNorm();
    }
    if (!neg) active_sum += s.a[j] * w;
  }

  const double max_res = r.residuals.cwiseAbs().maxCoeff();
  const double loss_gap = std::abs(r.final_loss - r.loss_star);
  const double agg_gap = (active_sum - fit.beta).norm();
  r.interpolation_failed = r.final_loss > 10.0 * tol_loss;
  r.checks.push_back({"residual-to-ols", max_res <= tol_residual, max_res, tol_residual});
  r.checks.push_back({"loss-to-ols", loss_gap <= tol_loss, loss_gap, tol_loss});
  r.checks.push_back({"sign-constant-neurons", r.mixed_mass <= kMixedMassTol, r.mixed_mass, kMixedMassTol});
  r.checks.push_back({"active-aggregate-to-ols", agg_gap <= tol_residual, agg_gap, tol_residual});
  r.checks.push_back({"interpolation-failed", r.interpolation_failed, r.final_loss, 10.0 * tol_loss});
  r.linear_network = gamma == 1.0;
  if (r.linear_network) {
    r.note = "gamma = 1: the network is linear, so the OLS limit is its global minimum and the failure is trivial";
  }
  return r;
}

}  // namespace alignlab
