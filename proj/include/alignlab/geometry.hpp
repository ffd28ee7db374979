#pragma once

#include "alignlab/core.hpp"
#include "alignlab/dataset.hpp"
#include "alignlab/loss.hpp"

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace alignlab {

/// Relative band |<w,x_k>| <= kZeroTol ||w|| ||x_k|| treated as sign 0.
inline constexpr double kZeroTol = 1e-9;

// ---------------------------------------------------------------------------
// Activation patterns and cones
// ---------------------------------------------------------------------------

/// Sign vector (sign <w, x_k>)_k over {-1, 0, +1}.
class ActivationPattern {
 public:
  ActivationPattern() = default;
  explicit ActivationPattern(std::vector<std::int8_t> signs) : signs_(std::move(signs)) {
    for (auto s : signs_) {
      if (s < -1 || s > 1) throw Error("activation pattern entries must be in {-1, 0, 1}");
    }
  }

  static ActivationPattern constant(int n, std::int8_t s) {
    return ActivationPattern(std::vector<std::int8_t>(static_cast<std::size_t>(n), s));
  }

  /// Parses the "+0-" string form.
  static ActivationPattern parse(std::string_view s) {
    std::vector<std::int8_t> signs;
    signs.reserve(s.size());
    for (char c : s) {
      switch (c) {
        case '+': signs.push_back(1); break;
        case '-': signs.push_back(-1); break;
        case '0': signs.push_back(0); break;
        default: throw Error("invalid pattern character '" + std::string(1, c) + "'");
      }
    }
    return ActivationPattern(std::move(signs));
  }

  int size() const { return static_cast<int>(signs_.size()); }
  std::int8_t operator[](int k) const { return signs_[static_cast<std::size_t>(k)]; }
  const std::vector<std::int8_t>& signs() const { return signs_; }

  int zero_count() const {
    return static_cast<int>(std::count(signs_.begin(), signs_.end(), std::int8_t{0}));
  }
  bool has(std::int8_t s) const { return std::find(signs_.begin(), signs_.end(), s) != signs_.end(); }

  ActivationPattern negated() const {
    auto out = signs_;
    for (auto& s : out) s = static_cast<std::int8_t>(-s);
    return ActivationPattern(std::move(out));
  }

  std::string to_string() const {
    std::string s;
    s.reserve(signs_.size());
    for (auto v : signs_) s.push_back(v > 0 ? '+' : (v < 0 ? '-' : '0'));
    return s;
  }

  friend bool operator==(const ActivationPattern&, const ActivationPattern&) = default;
  friend auto operator<=>(const ActivationPattern&, const ActivationPattern&) = default;

 private:
  std::vector<std::int8_t> signs_;
};

inline ActivationPattern activation_pattern(const Vec& w, const Dataset& ds, double zero_tol = kZeroTol) {
  std::vector<std::int8_t> signs(static_cast<std::size_t>(ds.n()));
  const double wn = w.norm();
  for (int k = 0; k < ds.n(); ++k) {
    const double ip = ds.features().row(k).dot(w);
    const double band = zero_tol * wn * ds.features().row(k).norm();
    signs[static_cast<std::size_t>(k)] = std::abs(ip) <= band ? 0 : static_cast<std::int8_t>(sign_of(ip));
  }
  return ActivationPattern(std::move(signs));
}

/// True when `inner` lies in the closure of the cone of `outer`: every
/// nonzero sign of `inner` agrees with `outer`, and zeros of `outer` stay zero.
inline bool in_closure(const ActivationPattern& inner, const ActivationPattern& outer) {
  for (int k = 0; k < outer.size(); ++k) {
    if (outer[k] == 0 && inner[k] != 0) return false;
    if (outer[k] != 0 && inner[k] == -outer[k]) return false;
  }
  return true;
}

/// One nonempty activation cone with a unit representative. For exact d = 2
/// enumeration the closure endpoints of the arc are also recorded (equal for
/// a boundary ray).
struct Cone {
  ActivationPattern pattern;
  Vec representative;
  int zero_set_dim = 0;
  std::optional<std::pair<Vec, Vec>> arc;
};

struct ConeEnumeration {
  std::vector<Cone> cones;
  bool approximate = false;
};

struct EnumerationOptions {
  int samples = 20000;
  std::uint64_t seed = 0x5eed;
};

namespace detail {

inline double angle_of(const Vec& v) {
  double a = std::atan2(v[1], v[0]);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  return a;
}

inline Vec unit_at(double angle) {
  Vec v(2);
  v << std::cos(angle), std::sin(angle);
  return v;
}

inline void sort_and_dedup(std::vector<Cone>& cones) {
  std::stable_sort(cones.begin(), cones.end(),
                   [](const Cone& a, const Cone& b) { return a.pattern < b.pattern; });
  cones.erase(std::unique(cones.begin(), cones.end(),
                          [](const Cone& a, const Cone& b) { return a.pattern == b.pattern; }),
              cones.end());
}

inline ConeEnumeration enumerate_planar(const Dataset& ds) {
  struct Ray {
    double angle;
    Vec dir;
  };
  std::vector<Ray> rays;
  for (int k = 0; k < ds.n(); ++k) {
    const Vec x = ds.x(k);
    // Rotations by +-90 degrees are exactly orthogonal to x_k in floating point.
    Vec r(2);
    r << -x[1], x[0];
    r /= r.norm();
    rays.push_back({angle_of(r), r});
    rays.push_back({angle_of(-r), -r});
  }
  std::sort(rays.begin(), rays.end(), [](const Ray& a, const Ray& b) { return a.angle < b.angle; });
  std::vector<Ray> distinct;
  constexpr double kAngleTol = 1e-12;
  for (const auto& r : rays) {
    if (distinct.empty() || r.angle - distinct.back().angle > kAngleTol) distinct.push_back(r);
  }
  if (distinct.size() > 1 &&
      distinct.front().angle + 2.0 * std::numbers::pi - distinct.back().angle <= kAngleTol) {
    distinct.pop_back();
  }

  ConeEnumeration out;
  const auto count = distinct.size();
  for (std::size_t i = 0; i < count; ++i) {
    const auto& lo = distinct[i];
    const auto& hi = distinct[(i + 1) % count];
    Cone ray;
    ray.pattern = activation_pattern(lo.dir, ds);
    ray.representative = lo.dir;
    ray.zero_set_dim = ray.pattern.zero_count();
    ray.arc = std::make_pair(lo.dir, lo.dir);
    out.cones.push_back(std::move(ray));

    double gap = hi.angle - lo.angle;
    if (gap <= 0.0) gap += 2.0 * std::numbers::pi;
    Cone arc;
    arc.representative = unit_at(lo.angle + 0.5 * gap);
    arc.pattern = activation_pattern(arc.representative, ds);
    arc.zero_set_dim = arc.pattern.zero_count();
    arc.arc = std::make_pair(lo.dir, hi.dir);
    out.cones.push_back(std::move(arc));
  }
  sort_and_dedup(out.cones);
  return out;
}

}  // namespace detail

/// Enumerates the nonempty activation cones of the data's hyperplane
/// arrangement. Exact for d <= 2 (every arc and every boundary ray). For
/// d >= 3 only full-dimensional cones hit by seeded direction sampling are
/// returned and the result is flagged approximate.
inline ConeEnumeration enumerate_cones(const Dataset& ds, const EnumerationOptions& opt = {}) {
  if (ds.d() == 2) return detail::enumerate_planar(ds);
  ConeEnumeration out;
  if (ds.d() == 1) {
    for (double s : {1.0, -1.0}) {
      Vec w(1);
      w << s;
      out.cones.push_back({activation_pattern(w, ds), w, 0, std::nullopt});
    }
    detail::sort_and_dedup(out.cones);
    return out;
  }

  out.approximate = true;
  const int d = ds.d();
  std::vector<Vec> candidates;
  Rng rng(opt.seed);
  for (int s = 0; s < opt.samples; ++s) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = rng.normal();
    candidates.push_back(v.normalized());
  }
  for (int k = 0; k < ds.n(); ++k) {
    const Vec x = ds.x(k).normalized();
    candidates.push_back(x);
    candidates.push_back(-x);
  }
  if (d == 3) {
    // Cross products sit on arrangement vertices; jitter them into the
    // neighbouring small cones.
    for (int k = 0; k < ds.n(); ++k) {
      for (int l = k + 1; l < ds.n(); ++l) {
        const Vec a = ds.x(k);
        const Vec b = ds.x(l);
        Vec c(3);
        c << a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0];
        if (c.norm() == 0.0) continue;
        c.normalize();
        for (int rep = 0; rep < 8; ++rep) {
          Vec jitter(3);
          for (int i = 0; i < 3; ++i) jitter[i] = 1e-4 * rng.normal();
          candidates.push_back((c + jitter).normalized());
          candidates.push_back((-c + jitter).normalized());
        }
      }
    }
  }
  for (const auto& v : candidates) {
    auto p = activation_pattern(v, ds);
    if (p.zero_count() != 0) continue;
    out.cones.push_back({std::move(p), v, 0, std::nullopt});
  }
  detail::sort_and_dedup(out.cones);
  return out;
}

// ---------------------------------------------------------------------------
// Minimal-norm subgradient
// ---------------------------------------------------------------------------

struct QpOptions {
  double tolerance = 1e-10;
  int max_iterations = 20000;
};

/// Minimal-norm element of {-(1/n) sum_k eta_k c_k x_k} where eta_k = 1 on
/// +1 entries, gamma on -1 entries and ranges over [gamma, 1] on zeros.
struct MinNormSubgradient {
  Vec vector;
  Vec eta;
  ActivationPattern pattern;
  double qp_gap = 0.0;
  int iterations = 0;
};

namespace detail {

struct BoxLeastSquares {
  Vec fixed;                 // D~, contribution of nonzero pattern entries
  Mat columns;               // Z, one column per free index
  std::vector<int> free;     // indices k with pattern_k = 0
};

inline BoxLeastSquares split_subgradient(const ActivationPattern& u, const Vec& coeffs, const Dataset& ds,
                                         double gamma) {
  BoxLeastSquares p;
  const double inv_n = 1.0 / ds.n();
  p.fixed = Vec::Zero(ds.d());
  for (int k = 0; k < ds.n(); ++k) {
    if (u[k] > 0) {
      p.fixed -= inv_n * coeffs[k] * ds.x(k);
    } else if (u[k] < 0) {
      p.fixed -= inv_n * gamma * coeffs[k] * ds.x(k);
    } else {
      p.free.push_back(k);
    }
  }
  p.columns.resize(ds.d(), static_cast<Eigen::Index>(p.free.size()));
  for (std::size_t i = 0; i < p.free.size(); ++i) {
    p.columns.col(static_cast<Eigen::Index>(i)) = -inv_n * coeffs[p.free[i]] * ds.x(p.free[i]);
  }
  return p;
}

inline Vec project_box(Vec v, double lo, double hi) { return v.cwiseMax(lo).cwiseMin(hi); }

inline double kkt_residual(const Mat& q, const Vec& lin, const Vec& eta, double lo, double hi) {
  const Vec g = q * eta + lin;
  return (project_box(eta - g, lo, hi) - eta).lpNorm<Eigen::Infinity>();
}

}  // namespace detail

/// Solves min_{eta in [gamma,1]^K} ||D~ + Z eta|| by projected gradient with
/// exact line search along the projected direction, then polishes on the
/// identified active set. `coeffs` are the loss derivatives c_k.
inline MinNormSubgradient min_norm_subgradient(const ActivationPattern& u, const Vec& coeffs, const Dataset& ds,
                                               double gamma, const QpOptions& opt = {}) {
  if (gamma < 0.0 || gamma > 1.0) throw Error("gamma must lie in [0, 1]");
  if (u.size() != ds.n() || coeffs.size() != ds.n()) throw Error("pattern/coefficients do not match dataset size");

  const auto p = detail::split_subgradient(u, coeffs, ds, gamma);
  MinNormSubgradient out;
  out.pattern = u;
  out.eta = Vec(ds.n());
  for (int k = 0; k < ds.n(); ++k) out.eta[k] = u[k] > 0 ? 1.0 : (u[k] < 0 ? gamma : 0.0);

  const auto m = static_cast<Eigen::Index>(p.free.size());
  if (m == 0) {
    out.vector = p.fixed;
    return out;
  }

  const double lo = gamma;
  const double hi = 1.0;
  const Mat q = p.columns.transpose() * p.columns;
  const Vec lin = p.columns.transpose() * p.fixed;
  const double lipschitz = std::max(q.trace(), 1e-300);

  Vec eta = Vec::Constant(m, 0.5 * (lo + hi));
  int it = 0;
  double gap = detail::kkt_residual(q, lin, eta, lo, hi);
  for (; it < opt.max_iterations && gap > opt.tolerance; ++it) {
    const Vec g = q * eta + lin;
    const Vec dir = detail::project_box(eta - g / lipschitz, lo, hi) - eta;
    const double curvature = dir.dot(q * dir);
    double step = 1.0;
    if (curvature > 0.0) step = std::clamp(-g.dot(dir) / curvature, 0.0, 1.0);
    eta += step * dir;
    gap = detail::kkt_residual(q, lin, eta, lo, hi);
  }

  // Active-set polish: re-solve exactly on the coordinates strictly inside.
  std::vector<Eigen::Index> inside;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (eta[i] > lo + 1e-12 && eta[i] < hi - 1e-12) inside.push_back(i);
  }
  if (!inside.empty()) {
    Vec candidate = eta;
    Mat zf(p.columns.rows(), static_cast<Eigen::Index>(inside.size()));
    Vec rhs = p.fixed;
    std::vector<bool> is_inside(static_cast<std::size_t>(m), false);
    for (std::size_t i = 0; i < inside.size(); ++i) {
      zf.col(static_cast<Eigen::Index>(i)) = p.columns.col(inside[i]);
      is_inside[static_cast<std::size_t>(inside[i])] = true;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!is_inside[static_cast<std::size_t>(i)]) rhs += p.columns.col(i) * eta[i];
    }
    const Vec sol = zf.completeOrthogonalDecomposition().solve(-rhs);
    for (std::size_t i = 0; i < inside.size(); ++i) candidate[inside[i]] = sol[static_cast<Eigen::Index>(i)];
    candidate = detail::project_box(candidate, lo, hi);
    const double cand_gap = detail::kkt_residual(q, lin, candidate, lo, hi);
    const double f_old = (p.fixed + p.columns * eta).squaredNorm();
    const double f_new = (p.fixed + p.columns * candidate).squaredNorm();
    if (cand_gap <= gap || f_new < f_old) {
      eta = candidate;
      gap = cand_gap;
    }
  }

  for (Eigen::Index i = 0; i < m; ++i) out.eta[p.free[static_cast<std::size_t>(i)]] = eta[i];
  out.vector = p.fixed + p.columns * eta;
  out.qp_gap = gap;
  out.iterations = it;
  return out;
}

/// c_k = dl(0, y_k), the coefficients that define D_u at theta = 0.
inline Vec zero_output_coefficients(const Dataset& ds, const LossModel& loss) {
  Vec c(ds.n());
  for (int k = 0; k < ds.n(); ++k) c[k] = loss.derivative(0.0, ds.y(k));
  return c;
}

/// D_u: the minimal-norm subgradient of cone u at theta = 0.
inline MinNormSubgradient cone_subgradient(const ActivationPattern& u, const Dataset& ds, const LossModel& loss,
                                           double gamma) {
  return min_norm_subgradient(u, zero_output_coefficients(ds, loss), ds, gamma);
}

/// G(w) = <w, D(w, 0)> on the unit sphere.
inline double g_value(const Vec& w, const Dataset& ds, const LossModel& loss, double gamma) {
  if (std::abs(w.norm() - 1.0) > 1e-9) throw Error("g_value expects a unit vector");
  return w.dot(cone_subgradient(activation_pattern(w, ds), ds, loss, gamma).vector);
}

// ---------------------------------------------------------------------------
// Extremal vectors
// ---------------------------------------------------------------------------

enum class ExtremumKind { local_max, local_min };

inline std::string_view to_string(ExtremumKind k) { return k == ExtremumKind::local_max ? "local-max" : "local-min"; }

struct ExtremalVector {
  ActivationPattern pattern;
  Vec D;
  ExtremumKind kind = ExtremumKind::local_max;
  int proportionality = 1;  // +1: D in A^-1(u); -1: D in -A^-1(u)

  /// Critical direction of G on the sphere, proportionality * D / ||D||.
  Vec direction() const { return proportionality * D.normalized(); }
};

struct ExtremalSet {
  std::vector<ExtremalVector> vectors;
  /// Cones whose D_u sits on the boundary of their closure; generic data
  /// never produces these.
  std::vector<ActivationPattern> genericity_violations;
  /// Boundary rays where G rises on one side and falls on the other.
  std::vector<ActivationPattern> saddles;
  bool approximate = false;
};

/// Scale below which a subgradient counts as the zero vector.
inline double subgradient_zero_tolerance(const Dataset& ds, const Vec& coeffs) {
  double scale = 0.0;
  for (int k = 0; k < ds.n(); ++k) scale += std::abs(coeffs[k]) * ds.features().row(k).norm();
  return 1e-12 * std::max(scale / ds.n(), 1e-300);
}

namespace detail {

/// One-sided derivatives of G along the circle at a boundary ray w (unit,
/// d = 2), moving counterclockwise and clockwise. G is linear on the two
/// neighbouring arcs, whose patterns follow from the tangent direction.
inline std::pair<double, double> ray_side_slopes(const Vec& w, const ActivationPattern& u, const Vec& coeffs,
                                                 const Dataset& ds, double gamma) {
  Vec t(2);
  t << -w[1], w[0];
  auto side = [&](double s) {
    auto signs = u.signs();
    for (int k = 0; k < ds.n(); ++k) {
      if (signs[static_cast<std::size_t>(k)] == 0) {
        signs[static_cast<std::size_t>(k)] = static_cast<std::int8_t>(sign_of(s * t.dot(ds.x(k))));
      }
    }
    const Vec d = min_norm_subgradient(ActivationPattern(std::move(signs)), coeffs, ds, gamma).vector;
    return s * t.dot(d);
  };
  return {side(1.0), side(-1.0)};
}

}  // namespace detail

/// Emits every cone whose minimal-norm D_u is nonzero and lies in A^-1(u)
/// (proportionality +1) or -A^-1(u) (proportionality -1). Inside an arc the
/// first is a local max of G and the second a local min; on a boundary ray
/// the kind is read off the one-sided slopes of G.
inline ExtremalSet find_extremal_vectors(const Dataset& ds, const LossModel& loss, double gamma,
                                         const EnumerationOptions& opt = {}) {
  const auto cones = enumerate_cones(ds, opt);
  const Vec c0 = zero_output_coefficients(ds, loss);
  const double zero = subgradient_zero_tolerance(ds, c0);
  ExtremalSet out;
  out.approximate = cones.approximate;
  for (const auto& cone : cones.cones) {
    const auto sub = min_norm_subgradient(cone.pattern, c0, ds, gamma);
    if (sub.vector.norm() <= zero) continue;
    const auto plus = activation_pattern(sub.vector, ds);
    const auto minus = plus.negated();
    int proportionality = 0;
    if (plus == cone.pattern) {
      proportionality = 1;
    } else if (minus == cone.pattern) {
      proportionality = -1;
    } else {
      if (in_closure(plus, cone.pattern) || in_closure(minus, cone.pattern)) {
        out.genericity_violations.push_back(cone.pattern);
      }
      continue;
    }
    ExtremalVector e{cone.pattern, sub.vector,
                     proportionality > 0 ? ExtremumKind::local_max : ExtremumKind::local_min, proportionality};
    if (ds.d() == 2 && cone.pattern.zero_count() > 0) {
      const auto [ccw, cw] = detail::ray_side_slopes(e.direction(), cone.pattern, c0, ds, gamma);
      if (ccw < 0.0 && cw < 0.0) {
        e.kind = ExtremumKind::local_max;
      } else if (ccw > 0.0 && cw > 0.0) {
        e.kind = ExtremumKind::local_min;
      } else {
        out.saddles.push_back(cone.pattern);
      }
    }
    out.vectors.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Brute-force oracle on the circle
// ---------------------------------------------------------------------------

struct CriticalDirection {
  Vec direction;
  double angle = 0.0;
  double value = 0.0;
  ExtremumKind kind = ExtremumKind::local_max;
};

struct OracleResult {
  /// Strict local extrema of G with nonzero value.
  std::vector<CriticalDirection> critical;
  /// Flat runs at G = 0 (dead regions where D = 0).
  int dead_plateaus = 0;
  /// Flat runs at a nonzero value that are extrema.
  int plateau_extrema = 0;
  /// Flat nonzero runs that are not extrema; a nonzero count means G has a
  /// saddle.
  int saddles = 0;
};

/// Samples G at `resolution` equispaced angles, keeps strict circular local
/// extrema and refines each by golden-section search inside its bracket.
inline OracleResult grid_oracle_critical_directions(const Dataset& ds, const LossModel& loss, double gamma,
                                                    int resolution) {
  if (ds.d() != 2) throw UnsupportedDimensionError("grid oracle requires d = 2");
  if (resolution < 1000) throw Error("grid oracle resolution must be at least 1000");
  const double two_pi = 2.0 * std::numbers::pi;
  const double h = two_pi / resolution;
  auto g_at = [&](double angle) { return g_value(detail::unit_at(angle), ds, loss, gamma); };

  std::vector<double> values(static_cast<std::size_t>(resolution));
  double scale = 0.0;
  for (int i = 0; i < resolution; ++i) {
    values[static_cast<std::size_t>(i)] = g_at(i * h);
    scale = std::max(scale, std::abs(values[static_cast<std::size_t>(i)]));
  }
  const double flat = 1e-13 * std::max(scale, 1e-300);

  // Collapse the circular sequence into runs of equal values.
  struct Run {
    int begin;
    int length;
    double value;
  };
  std::vector<Run> runs;
  int start = 0;
  // Rotate so that index 0 starts a run.
  while (start < resolution &&
         std::abs(values[static_cast<std::size_t>(start)] -
                  values[static_cast<std::size_t>((start + resolution - 1) % resolution)]) <= flat) {
    ++start;
  }
  OracleResult out;
  if (start == resolution) return out;  // G is constant
  for (int i = 0; i < resolution; ++i) {
    const int idx = (start + i) % resolution;
    const double v = values[static_cast<std::size_t>(idx)];
    if (!runs.empty() && std::abs(v - runs.back().value) <= flat) {
      ++runs.back().length;
    } else {
      runs.push_back({idx, 1, v});
    }
  }

  const auto r = runs.size();
  for (std::size_t i = 0; i < r; ++i) {
    const auto& prev = runs[(i + r - 1) % r];
    const auto& cur = runs[i];
    const auto& next = runs[(i + 1) % r];
    const bool is_max = cur.value > prev.value && cur.value > next.value;
    const bool is_min = cur.value < prev.value && cur.value < next.value;
    if (cur.length > 1) {
      if (std::abs(cur.value) <= flat) {
        ++out.dead_plateaus;
      } else if (is_max || is_min) {
        ++out.plateau_extrema;
      } else {
        ++out.saddles;
      }
      continue;
    }
    if (!is_max && !is_min) continue;
    const double sign = is_max ? -1.0 : 1.0;  // minimise sign * G
    double lo = (cur.begin - 1) * h;
    double hi = (cur.begin + 1) * h;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = hi - phi * (hi - lo);
    double b = lo + phi * (hi - lo);
    double fa = sign * g_at(a);
    double fb = sign * g_at(b);
    for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
      if (fa <= fb) {
        hi = b;
        b = a;
        fb = fa;
        a = hi - phi * (hi - lo);
        fa = sign * g_at(a);
      } else {
        lo = a;
        a = b;
        fa = fb;
        b = lo + phi * (hi - lo);
        fb = sign * g_at(b);
      }
    }
    double angle = std::fmod(0.5 * (lo + hi) + two_pi, two_pi);
    CriticalDirection cd;
    cd.angle = angle;
    cd.direction = detail::unit_at(angle);
    cd.value = g_at(angle);
    cd.kind = is_max ? ExtremumKind::local_max : ExtremumKind::local_min;
    if (std::abs(cd.value) > flat) out.critical.push_back(std::move(cd));
  }
  std::sort(out.critical.begin(), out.critical.end(),
            [](const CriticalDirection& a, const CriticalDirection& b) { return a.angle < b.angle; });
  return out;
}

// ---------------------------------------------------------------------------
// Alignment constants
// ---------------------------------------------------------------------------

struct ConeConstants {
  ActivationPattern pattern;
  Vec D;
  double norm = 0.0;
  bool contains_zero = false;
  bool meets_cone = false;           // D_u set meets A^-1(u)
  bool meets_negative_cone = false;  // D_u set meets -A^-1(u)
  double sigma_min_z = kInf;         // smallest singular value of Z_u
  double eta_margin = kInf;          // min_k min(eta_k - gamma, 1 - eta_k) over free k
  double max_cosine = -kInf;         // max over closure of cos(w, D_u)
  double min_cosine = kInf;          // min over closure of cos(w, D_u)
  double norm_independent = 0.0;     // min over the set, independent route

  bool extremal() const { return !contains_zero && (meets_cone || meets_negative_cone); }
};

struct AlignmentConstants {
  double d_max = 0.0;
  double d_min = kInf;
  double d_min_independent = kInf;
  double alpha_min = 1.0;
  double alpha_min_plus = 1.0;
  double alpha_min_minus = 1.0;
  double delta_0 = kInf;
  double delta_0_prime = kInf;
  double delta_0_second = kInf;
  double data_scale = 0.0;          // n / sum_k ||x_k||^2
  double label_term = kInf;         // min_k |dl(0, y_k)| / ||x_k||
  double alpha_0 = 0.0;
  double epsilon = 0.0;
  double lambda_star_value = 0.0;
  std::vector<ConeConstants> cones;

  /// Initialisation scale threshold for alignment, re-evaluated from the
  /// stored ingredients.
  double lambda_star(double alpha0, double eps) const {
    const double inner = std::min({alpha_min * alpha_min / 8.0 * d_min, alpha0 * alpha0 / 4.0 * d_min, delta_0});
    const double base = std::min(data_scale * inner, label_term);
    return std::pow(base, 1.0 / (2.0 - 4.0 * eps));
  }

  /// Length of the early alignment phase, -eps ln(lambda) / D_max.
  double tau(double eps, double lambda) const { return -eps * std::log(lambda) / d_max; }
};

namespace detail {

inline double cosine_extreme_on_arc(const Cone& cone, const Vec& target, bool maximise) {
  const auto& [a, b] = *cone.arc;
  double best = maximise ? std::max(cosine(a, target), cosine(b, target))
                         : std::min(cosine(a, target), cosine(b, target));
  if (a.isApprox(b)) return best;
  // The extremum of cos on the circle sits at +-target; check whether that
  // point lies strictly inside the arc (a -> b counterclockwise).
  const Vec t = (maximise ? target : Vec(-target)).normalized();
  const double span = std::fmod(angle_of(b) - angle_of(a) + 4.0 * std::numbers::pi, 2.0 * std::numbers::pi);
  const double offset = std::fmod(angle_of(t) - angle_of(a) + 4.0 * std::numbers::pi, 2.0 * std::numbers::pi);
  if (offset > 0.0 && offset < span) best = maximise ? 1.0 : -1.0;
  return best;
}

/// min over eta in the box of ||D~ + Z eta||, by closed form for one free
/// column and by a fine grid otherwise.
inline double min_norm_independent(const BoxLeastSquares& p, double gamma) {
  const auto m = p.columns.cols();
  if (m == 0) return p.fixed.norm();
  if (m == 1) {
    const Vec z = p.columns.col(0);
    const double zz = z.squaredNorm();
    const double t = zz > 0.0 ? std::clamp(-p.fixed.dot(z) / zz, gamma, 1.0) : gamma;
    return (p.fixed + t * z).norm();
  }
  const int steps = m == 2 ? 2000 : 60;
  double best = kInf;
  std::vector<int> idx(static_cast<std::size_t>(m), 0);
  while (true) {
    Vec eta(m);
    for (Eigen::Index i = 0; i < m; ++i) eta[i] = gamma + (1.0 - gamma) * idx[static_cast<std::size_t>(i)] / steps;
    best = std::min(best, (p.fixed + p.columns * eta).norm());
    Eigen::Index i = 0;
    while (i < m && ++idx[static_cast<std::size_t>(i)] > steps) idx[static_cast<std::size_t>(i++)] = 0;
    if (i == m) break;
  }
  return best;
}

}  // namespace detail

/// Tabulates D_u over every cone (exact planar enumeration) and assembles
/// D_max, D_min, alpha_min, delta_0 and lambda*_{alpha_0}.
inline AlignmentConstants compute_constants(const Dataset& ds, const LossModel& loss, double gamma, double alpha_0,
                                            double epsilon) {
  if (ds.d() != 2) throw UnsupportedDimensionError("alignment constants are computed exactly only for d = 2");
  if (!(alpha_0 > 0.0 && alpha_0 <= 1.0)) throw Error("alpha_0 must lie in (0, 1]");
  if (!(epsilon > 0.0 && epsilon < 1.0 / 3.0)) throw Error("epsilon must lie in (0, 1/3)");

  const auto cones = enumerate_cones(ds);
  const Vec c0 = zero_output_coefficients(ds, loss);
  const double zero = subgradient_zero_tolerance(ds, c0);

  AlignmentConstants out;
  out.alpha_0 = alpha_0;
  out.epsilon = epsilon;
  double sum_sq = 0.0;
  for (int k = 0; k < ds.n(); ++k) {
    sum_sq += ds.features().row(k).squaredNorm();
    out.label_term = std::min(out.label_term, std::abs(c0[k]) / ds.features().row(k).norm());
  }
  out.data_scale = ds.n() / sum_sq;

  double max_plus = -kInf;
  double min_minus = kInf;
  bool any_plus = false;
  bool any_minus = false;
  for (const auto& cone : cones.cones) {
    const auto sub = min_norm_subgradient(cone.pattern, c0, ds, gamma);
    const auto parts = detail::split_subgradient(cone.pattern, c0, ds, gamma);
    ConeConstants cc;
    cc.pattern = cone.pattern;
    cc.D = sub.vector;
    cc.norm = sub.vector.norm();
    cc.contains_zero = cc.norm <= zero;
    cc.norm_independent = detail::min_norm_independent(parts, gamma);
    if (!cc.contains_zero) {
      const auto plus = activation_pattern(sub.vector, ds);
      cc.meets_cone = plus == cone.pattern;
      cc.meets_negative_cone = plus.negated() == cone.pattern;
    }
    if (parts.columns.cols() > 0) {
      if (parts.columns.cols() > parts.columns.rows()) {
        cc.sigma_min_z = 0.0;
      } else {
        Eigen::JacobiSVD<Mat> svd(parts.columns);
        cc.sigma_min_z = svd.singularValues().minCoeff();
      }
      for (int k : parts.free) {
        cc.eta_margin = std::min(cc.eta_margin, std::min(sub.eta[k] - gamma, 1.0 - sub.eta[k]));
      }
    }
    out.d_max = std::max(out.d_max, cc.norm);
    if (!cc.contains_zero) {
      out.d_min = std::min(out.d_min, cc.norm);
      out.d_min_independent = std::min(out.d_min_independent, cc.norm_independent);
      cc.max_cosine = detail::cosine_extreme_on_arc(cone, cc.D, true);
      cc.min_cosine = detail::cosine_extreme_on_arc(cone, cc.D, false);
      if (!cc.meets_cone) {
        any_plus = true;
        max_plus = std::max(max_plus, cc.max_cosine);
      }
      if (!cc.meets_negative_cone) {
        any_minus = true;
        min_minus = std::min(min_minus, cc.min_cosine);
      }
    }
    if (cc.extremal()) {
      if (!parts.free.empty()) out.delta_0_prime = std::min(out.delta_0_prime, cc.sigma_min_z * cc.eta_margin);
      for (int k = 0; k < ds.n(); ++k) {
        if (cone.pattern[k] == 0) continue;
        out.delta_0_second = std::min(out.delta_0_second,
                                      std::abs(cc.D.dot(ds.x(k))) / ds.features().row(k).norm());
      }
    }
    out.cones.push_back(std::move(cc));
  }
  if (any_plus) out.alpha_min_plus = std::sqrt(std::max(0.0, 1.0 - max_plus * max_plus));
  if (any_minus) out.alpha_min_minus = std::sqrt(std::max(0.0, 1.0 - min_minus * min_minus));
  out.alpha_min = std::min(out.alpha_min_plus, out.alpha_min_minus);
  out.delta_0 = std::min(out.delta_0_prime, out.delta_0_second);
  out.lambda_star_value = out.lambda_star(alpha_0, epsilon);
  return out;
}

}  // namespace alignlab
