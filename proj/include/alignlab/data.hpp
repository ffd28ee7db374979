#pragma once

#include "alignlab/core.hpp"
#include "alignlab/dataset.hpp"
#include "alignlab/geometry.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace alignlab {

/// x1=(-0.75,1), x2=(-0.5,1), x3=(0.125,1) with labels 1.1, 0.1, 0.8. The
/// second coordinate is a bias feature.
inline Dataset builtin_three_point() {
  Mat x(3, 2);
  x << -0.75, 1.0, -0.5, 1.0, 0.125, 1.0;
  Vec y(3);
  y << 1.1, 0.1, 0.8;
  return Dataset(std::move(x), std::move(y));
}

/// Uniform draw from the three boxes of the 3-point assumption with width eta.
inline Dataset sample_three_point_boxes(double eta, std::uint64_t seed) {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be positive");
  Rng rng(seed, 0x4a41);
  Mat x(3, 2);
  Vec y(3);
  x(0, 0) = rng.uniform_left_open(-1.0, -1.0 + eta);
  x(0, 1) = rng.uniform(1.0, 1.0 + eta);
  y[0] = rng.uniform(1.0, 1.0 + eta);
  x(1, 0) = rng.uniform(-eta, eta);
  x(1, 1) = rng.uniform(1.0 - eta, 1.0 + eta);
  y[1] = rng.uniform_left_open(0.0, eta);
  x(2, 0) = rng.uniform(1.0 - eta, 1.0);
  x(2, 1) = rng.uniform(1.0, 1.0 + eta);
  y[2] = rng.uniform(1.0, 1.0 + eta);
  return Dataset(std::move(x), std::move(y));
}

// ---------------------------------------------------------------------------
// Least squares
// ---------------------------------------------------------------------------

inline constexpr double kMaxGramCondition = 1e12;

struct OlsFit {
  Vec beta;
  double condition = 0.0;  // condition number of X^T X
  double loss = 0.0;       // (1/2n) sum (<beta, x_k> - y_k)^2
  double residual_gradient_norm = 0.0;
};

inline OlsFit ols_estimator(const Dataset& ds) {
  const Mat& x = ds.features();
  const Vec& y = ds.labels();
  OlsFit fit;
  const Vec sv = Eigen::JacobiSVD<Mat>(x).singularValues();
  const double smax = sv.maxCoeff();
  const double smin = ds.n() >= ds.d() ? sv.minCoeff() : 0.0;
  fit.condition = smin > 0.0 ? (smax / smin) * (smax / smin) : kInf;
  if (!(fit.condition <= kMaxGramCondition)) {
    throw RankDeficientError("X^T X is singular or ill-conditioned (condition " + std::to_string(fit.condition) +
                                 ")",
                             fit.condition);
  }
  const Eigen::ColPivHouseholderQR<Mat> qr(x);
  fit.beta = qr.solve(y);
  // One round of refinement brings the normal-equation residual to roundoff.
  const Vec r0 = x * fit.beta - y;
  fit.beta -= qr.solve(r0);
  const Vec r = x * fit.beta - y;
  fit.residual_gradient_norm = (x.transpose() * r).norm();
  fit.loss = 0.5 * r.squaredNorm() / ds.n();
  return fit;
}

// ---------------------------------------------------------------------------
// Boundary index set
// ---------------------------------------------------------------------------

enum class CheckMode { automatic, exact, sampled };

struct IndexSet {
  std::vector<int> indices;
  bool approximate = false;
};

struct BoundaryOptions {
  CheckMode mode = CheckMode::automatic;
  int samples = 20000;
  std::uint64_t seed = 0x5eed;
};

namespace detail {

inline bool supports_index(const Dataset& ds, const Vec& w) {
  for (int k = 0; k < ds.n(); ++k) {
    if (ds.features().row(k).dot(w) < -kZeroTol * w.norm() * ds.features().row(k).norm()) return false;
  }
  return true;
}

inline bool exact_mode(const Dataset& ds, CheckMode mode) {
  if (mode == CheckMode::exact && ds.d() > 2) {
    throw UnsupportedDimensionError("exact assumption checking requires d <= 2 (got d = " + std::to_string(ds.d()) +
                                    ")");
  }
  return mode == CheckMode::exact || (mode == CheckMode::automatic && ds.d() <= 2);
}

}  // namespace detail

/// Indices k such that some w != 0 orthogonal to x_k has <w, x_k'> >= 0 for
/// every k'. Exact for d <= 2; sampled over x_k^perp otherwise.
inline IndexSet boundary_index_set(const Dataset& ds, const BoundaryOptions& opt = {}) {
  IndexSet out;
  const bool exact = detail::exact_mode(ds, opt.mode);
  out.approximate = !exact;
  if (ds.d() == 1) return out;
  Rng rng(opt.seed, 0xb0);
  for (int k = 0; k < ds.n(); ++k) {
    const Vec xk = ds.x(k);
    bool member = false;
    if (ds.d() == 2) {
      Vec r(2);
      r << -xk[1], xk[0];
      member = detail::supports_index(ds, r) || detail::supports_index(ds, -r);
    } else {
      const Vec xu = xk.normalized();
      auto project = [&](Vec v) { return Vec(v - v.dot(xu) * xu); };
      std::vector<Vec> candidates;
      for (int l = 0; l < ds.n(); ++l) {
        Vec p = project(ds.x(l));
        if (p.norm() > 1e-12 * ds.x(l).norm()) candidates.push_back(p.normalized());
      }
      for (int s = 0; s < opt.samples; ++s) {
        Vec v(ds.d());
        for (int i = 0; i < ds.d(); ++i) v[i] = rng.normal();
        v = project(v);
        if (v.norm() > 0.0) candidates.push_back(v.normalized());
      }
      for (const auto& c : candidates) {
        if (detail::supports_index(ds, c)) {
          member = true;
          break;
        }
      }
    }
    if (member) out.indices.push_back(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Assumption checkers
// ---------------------------------------------------------------------------

enum class AssumptionId { three_point_boxes, positive_data, boundary_margin, negative_neuron };

inline std::string_view to_string(AssumptionId id) {
  switch (id) {
    case AssumptionId::three_point_boxes: return "A4.1";
    case AssumptionId::positive_data: return "C.1";
    case AssumptionId::boundary_margin: return "C.2";
    case AssumptionId::negative_neuron: return "C.3";
  }
  return "?";
}

inline AssumptionId parse_assumption_id(std::string_view s) {
  if (s == "A4.1" || s == "a4.1") return AssumptionId::three_point_boxes;
  if (s == "C.1" || s == "c.1") return AssumptionId::positive_data;
  if (s == "C.2" || s == "c.2") return AssumptionId::boundary_margin;
  if (s == "C.3" || s == "c.3") return AssumptionId::negative_neuron;
  throw ConfigError("unknown assumption id: " + std::string(s));
}

struct NamedValue {
  std::string name;
  double value = 0.0;
  friend bool operator==(const NamedValue&, const NamedValue&) = default;
};

struct AssumptionReport {
  AssumptionId id = AssumptionId::positive_data;
  bool satisfied = true;
  std::vector<NamedValue> margins;
  std::vector<int> witnesses;
  bool approximate = false;
  std::string note;

  double min_margin() const {
    double m = kInf;
    for (const auto& v : margins) m = std::min(m, v.value);
    return m;
  }

  friend bool operator==(const AssumptionReport&, const AssumptionReport&) = default;
};

struct AssumptionOptions {
  double eta = 1.0 / 6.0;  // box width for the three-point boxes
  CheckMode mode = CheckMode::automatic;
  int samples = 20000;
  std::uint64_t seed = 0x5eed;
  int max_subsets = 200000;
};

namespace detail {

inline void add_margin(AssumptionReport& r, std::string name, double value, std::vector<int> witnesses = {}) {
  if (!(value > 0.0)) {
    for (int w : witnesses) {
      if (std::find(r.witnesses.begin(), r.witnesses.end(), w) == r.witnesses.end()) r.witnesses.push_back(w);
    }
  }
  r.margins.push_back({std::move(name), value});
}

inline void finish(AssumptionReport& r) {
  r.satisfied = true;
  for (const auto& m : r.margins) r.satisfied = r.satisfied && m.value > 0.0;
  std::sort(r.witnesses.begin(), r.witnesses.end());
}

inline AssumptionReport check_three_point_boxes(const Dataset& ds, const AssumptionOptions& opt) {
  AssumptionReport r;
  r.id = AssumptionId::three_point_boxes;
  if (ds.n() != 3 || ds.d() != 2) {
    add_margin(r, "shape", -1.0);
    r.note = "requires n = 3 points in d = 2";
    finish(r);
    return r;
  }
  const double e = opt.eta;
  const Mat& x = ds.features();
  auto box = [&](const std::string& name, double v, double lo, double hi, int k) {
    add_margin(r, name, std::min(v - lo, hi - v), {k});
  };
  box("x1[0]", x(0, 0), -1.0, -1.0 + e, 0);
  box("x1[1]", x(0, 1), 1.0, 1.0 + e, 0);
  box("y1", ds.y(0), 1.0, 1.0 + e, 0);
  box("x2[0]", x(1, 0), -e, e, 1);
  box("x2[1]", x(1, 1), 1.0 - e, 1.0 + e, 1);
  box("y2", ds.y(1), 0.0, e, 1);
  box("x3[0]", x(2, 0), 1.0 - e, 1.0, 2);
  box("x3[1]", x(2, 1), 1.0, 1.0 + e, 2);
  box("y3", ds.y(2), 1.0, 1.0 + e, 2);
  r.note = "margins are distances to the box faces (eta = " + std::to_string(e) + ")";
  finish(r);
  return r;
}

inline AssumptionReport check_positive_data(const Dataset& ds, const AssumptionOptions& opt) {
  AssumptionReport r;
  r.id = AssumptionId::positive_data;
  double min_ip = kInf;
  std::vector<int> ip_witness;
  for (int k = 0; k < ds.n(); ++k) {
    for (int l = k; l < ds.n(); ++l) {
      const double ip = ds.features().row(k).dot(ds.features().row(l));
      if (ip < min_ip) {
        min_ip = ip;
        ip_witness = {k, l};
      }
    }
  }
  add_margin(r, "min_inner_product", min_ip, ip_witness);

  double min_y = kInf;
  std::vector<int> y_witness;
  for (int k = 0; k < ds.n(); ++k) {
    if (!(ds.y(k) > 0.0)) y_witness.push_back(k);
    min_y = std::min(min_y, ds.y(k));
  }
  add_margin(r, "min_label", min_y, y_witness);
  add_margin(r, "n_minus_d_plus_1", ds.n() - ds.d() + 1.0);

  // Every subset of size min(n, d) must be linearly independent.
  const int size = std::min(ds.n(), ds.d());
  double min_sv = kInf;
  std::vector<int> sv_witness;
  auto visit = [&](const std::vector<int>& subset) {
    Mat sub(size, ds.d());
    for (int i = 0; i < size; ++i) sub.row(i) = ds.features().row(subset[static_cast<std::size_t>(i)]);
    const double s = Eigen::JacobiSVD<Mat>(sub).singularValues().minCoeff();
    if (s < min_sv) {
      min_sv = s;
      sv_witness = subset;
    }
  };
  double combos = 1.0;
  for (int i = 0; i < size; ++i) combos = combos * (ds.n() - i) / (i + 1);
  if (combos <= opt.max_subsets) {
    std::vector<int> subset(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) subset[static_cast<std::size_t>(i)] = i;
    while (true) {
      visit(subset);
      int i = size - 1;
      while (i >= 0 && subset[static_cast<std::size_t>(i)] == ds.n() - size + i) --i;
      if (i < 0) break;
      ++subset[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < size; ++j) subset[static_cast<std::size_t>(j)] = subset[static_cast<std::size_t>(j - 1)] + 1;
    }
  } else {
    r.approximate = true;
    r.note = "independence checked on " + std::to_string(opt.max_subsets) + " sampled subsets";
    Rng rng(opt.seed, 0xc1);
    std::vector<int> perm(static_cast<std::size_t>(ds.n()));
    for (int s = 0; s < opt.max_subsets; ++s) {
      for (int i = 0; i < ds.n(); ++i) perm[static_cast<std::size_t>(i)] = i;
      for (int i = 0; i < size; ++i) {
        const int j = i + static_cast<int>(rng.next() % static_cast<std::uint64_t>(ds.n() - i));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
      }
      std::vector<int> subset(perm.begin(), perm.begin() + size);
      std::sort(subset.begin(), subset.end());
      visit(subset);
    }
  }
  add_margin(r, "min_subset_singular_value", min_sv, sv_witness);
  finish(r);
  return r;
}

inline AssumptionReport check_boundary_margin(const Dataset& ds, const AssumptionOptions& opt) {
  AssumptionReport r;
  r.id = AssumptionId::boundary_margin;
  const auto kset = boundary_index_set(ds, {opt.mode, opt.samples, opt.seed});
  r.approximate = kset.approximate;
  const double label_norm = ds.labels().norm();
  for (int k : kset.indices) {
    double cross = 0.0;
    for (int l = 0; l < ds.n(); ++l) {
      if (l == k) continue;
      const double ip = ds.features().row(l).dot(ds.features().row(k));
      cross += ip * ip;
    }
    const double margin = ds.y(k) * ds.features().row(k).squaredNorm() - label_norm * std::sqrt(cross);
    add_margin(r, "k=" + std::to_string(k), margin, {k});
  }
  r.note = "boundary set K = {";
  for (std::size_t i = 0; i < kset.indices.size(); ++i) r.note += (i ? "," : "") + std::to_string(kset.indices[i]);
  r.note += "}";
  finish(r);
  return r;
}

inline AssumptionReport check_negative_neuron(const Dataset& ds, const AssumptionOptions& opt) {
  AssumptionReport r;
  r.id = AssumptionId::negative_neuron;
  const bool exact = exact_mode(ds, opt.mode);
  const auto kset = boundary_index_set(ds, {opt.mode, opt.samples, opt.seed});
  const auto fit = ols_estimator(ds);
  const int n = ds.n();

  Vec resid(n);  // y_k - <beta*, x_k>
  for (int k = 0; k < n; ++k) resid[k] = ds.y(k) - ds.features().row(k).dot(fit.beta);
  std::vector<bool> in_k(static_cast<std::size_t>(n), false);
  for (int k : kset.indices) {
    in_k[static_cast<std::size_t>(k)] = true;
    add_margin(r, "residual k=" + std::to_string(k), resid[k], {k});
  }

  const auto cones = enumerate_cones(ds, {opt.samples, opt.seed});
  r.approximate = kset.approximate || cones.approximate;
  double cond1 = kInf;
  double cond2 = kInf;
  std::vector<int> w1;
  std::vector<int> w2;
  int mixed = 0;
  for (const auto& cone : cones.cones) {
    const auto& u = cone.pattern;
    if (!u.has(1) || !u.has(-1)) continue;
    ++mixed;
    Vec dtilde = Vec::Zero(ds.d());
    for (int k = 0; k < n; ++k) {
      if (u[k] > 0) dtilde += resid[k] * ds.x(k) / n;
    }

    // Condition 1: k in K with u_k != 0 whose hyperplane bounds the cone.
    if (exact && cone.arc) {
      const auto& [lo, hi] = *cone.arc;
      for (int k = 0; k < n; ++k) {
        if (!in_k[static_cast<std::size_t>(k)] || u[k] == 0) continue;
        const double band = 1e-12 * ds.x(k).norm();
        const bool bounds = std::abs(lo.dot(ds.x(k))) <= band || std::abs(hi.dot(ds.x(k))) <= band;
        if (!bounds) continue;
        double inf = u[k] * dtilde.dot(ds.x(k));
        for (int l = 0; l < n; ++l) {
          if (u[l] != 0) continue;
          inf += std::min(0.0, u[k] * resid[l] * ds.x(l).dot(ds.x(k)) / n);
        }
        if (inf < cond1) {
          cond1 = inf;
          w1 = {k};
        }
      }
    }

    // Condition 2: <D~, w> > 0 on the part of the cone where K has both signs.
    bool k_plus = false;
    bool k_minus = false;
    for (int k : kset.indices) {
      k_plus = k_plus || u[k] > 0;
      k_minus = k_minus || u[k] < 0;
    }
    if (!(k_plus && k_minus)) continue;
    std::vector<Vec> probes{cone.representative};
    if (exact && cone.arc && !cone.arc->first.isApprox(cone.arc->second)) {
      const Vec& lo = cone.arc->first;
      const Vec& hi = cone.arc->second;
      const double a = detail::angle_of(lo);
      double span = detail::angle_of(hi) - a;
      if (span <= 0.0) span += 2.0 * std::numbers::pi;
      probes.push_back(detail::unit_at(a + 1e-3 * span));
      probes.push_back(detail::unit_at(a + (1.0 - 1e-3) * span));
    }
    for (const auto& p : probes) {
      const double v = dtilde.dot(p);
      if (v < cond2) {
        cond2 = v;
        w2.clear();
        for (int k = 0; k < n; ++k) {
          if (u[k] > 0) w2.push_back(k);
        }
      }
    }
  }
  if (std::isfinite(cond1)) add_margin(r, "condition1_min_inf", cond1, w1);
  if (std::isfinite(cond2)) add_margin(r, "condition2_min_probe", cond2, w2);
  r.note = "conditions certified on probe points of " + std::to_string(mixed) +
           " mixed-sign cones (arc midpoint and endpoints nudged inward), not a maximal delta_u";
  if (!exact) r.note += "; condition 1 skipped in sampled mode";
  finish(r);
  return r;
}

}  // namespace detail

/// Evaluates one data assumption and returns its named margins; satisfied
/// holds exactly when every margin is positive.
inline AssumptionReport check_assumption(const Dataset& ds, AssumptionId id, const AssumptionOptions& opt = {}) {
  switch (id) {
    case AssumptionId::three_point_boxes: return detail::check_three_point_boxes(ds, opt);
    case AssumptionId::positive_data: return detail::check_positive_data(ds, opt);
    case AssumptionId::boundary_margin: return detail::check_boundary_margin(ds, opt);
    case AssumptionId::negative_neuron: return detail::check_negative_neuron(ds, opt);
  }
  throw ConfigError("unknown assumption id");
}

}  // namespace alignlab
