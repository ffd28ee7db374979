#pragma once

#include "alignlab/core.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

namespace alignlab {

/// Gaussian XOR population: x ~ N(0, I_d), y = -sign(x_1) sign(x_2).
/// D(w, 0) = E[y x 1{<w, x> >= 0}]; the logistic factor 1/2 of dl(0, y)
/// is dropped.
struct XorConfig {
  int d = 8;
  std::int64_t n_samples = 1000000;
  std::uint64_t seed = 0;

  void validate() const {
    if (d < 2) throw ConfigError("xor.d must be at least 2");
    if (n_samples < 10000) throw ConfigError("xor.n_samples must be at least 10000");
  }

  friend bool operator==(const XorConfig&, const XorConfig&) = default;
};

inline constexpr std::int64_t kXorBlock = 4096;
inline constexpr double kSigmaRule = 3.0;

struct PopulationGradientEstimate {
  Vec mean;
  Vec std_error;   // per coordinate
  Mat covariance;  // of the mean estimate
  std::int64_t n_samples = 0;

  /// Standard error of <v, mean>.
  double std_error_of(const Vec& v) const { return std::sqrt(std::max(0.0, v.dot(covariance * v))); }
};

namespace detail {

/// Fixed-tree pairwise reduction of block partial sums.
class PairwiseSum {
 public:
  PairwiseSum(int d) : d_(d) {}

  void push(Vec sum, Mat outer) {
    int level = 0;
    while (!stack_.empty() && stack_.back().level == level) {
      sum += stack_.back().sum;
      outer += stack_.back().outer;
      stack_.pop_back();
      ++level;
    }
    stack_.push_back({level, std::move(sum), std::move(outer)});
  }

  std::pair<Vec, Mat> total() const {
    Vec s = Vec::Zero(d_);
    Mat o = Mat::Zero(d_, d_);
    for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) {
      s += it->sum;
      o += it->outer;
    }
    return {s, o};
  }

 private:
  struct Node {
    int level;
    Vec sum;
    Mat outer;
  };
  int d_;
  std::vector<Node> stack_;
};

inline double xor_label(const Vec& x) { return -static_cast<double>(sign_of(x[0]) * sign_of(x[1])); }

}  // namespace detail

/// Monte-Carlo estimates of D(w, 0) for several w on one shared sample.
/// Block b draws from Rng(seed, b), so the result depends only on the
/// config. flip_first negates x_1 in every draw.
inline std::vector<PopulationGradientEstimate> population_gradients_mc(const std::vector<Vec>& ws,
                                                                       const XorConfig& cfg,
                                                                       bool flip_first = false) {
  cfg.validate();
  const int d = cfg.d;
  for (const auto& w : ws) {
    if (w.size() != d) throw ConfigError("direction has dimension " + std::to_string(w.size()) + ", expected " +
                                         std::to_string(d));
    if (w.squaredNorm() == 0.0) throw ConfigError("direction must be nonzero");
  }
  std::vector<detail::PairwiseSum> acc(ws.size(), detail::PairwiseSum(d));
  std::vector<Vec> bsum(ws.size());
  std::vector<Mat> bouter(ws.size());
  Vec x(d);
  for (std::int64_t start = 0, b = 0; start < cfg.n_samples; start += kXorBlock, ++b) {
    const std::int64_t count = std::min(kXorBlock, cfg.n_samples - start);
    for (std::size_t i = 0; i < ws.size(); ++i) {
      bsum[i] = Vec::Zero(d);
      bouter[i] = Mat::Zero(d, d);
    }
    Rng rng(cfg.seed, static_cast<std::uint64_t>(b));
    for (std::int64_t s = 0; s < count; ++s) {
      for (int c = 0; c < d; ++c) x[c] = rng.normal();
      if (flip_first) x[0] = -x[0];
      const double y = detail::xor_label(x);
      if (y == 0.0) continue;
      for (std::size_t i = 0; i < ws.size(); ++i) {
        if (ws[i].dot(x) < 0.0) continue;
        bsum[i].noalias() += y * x;
        bouter[i].noalias() += x * x.transpose();
      }
    }
    for (std::size_t i = 0; i < ws.size(); ++i) acc[i].push(std::move(bsum[i]), std::move(bouter[i]));
  }
  std::vector<PopulationGradientEstimate> out;
  const double n = static_cast<double>(cfg.n_samples);
  for (const auto& a : acc) {
    auto [sum, outer] = a.total();
    PopulationGradientEstimate e;
    e.n_samples = cfg.n_samples;
    e.mean = sum / n;
    const Mat cov = (outer - n * e.mean * e.mean.transpose()) / (n - 1.0);
    e.covariance = cov / n;
    e.std_error = e.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    out.push_back(std::move(e));
  }
  return out;
}

inline PopulationGradientEstimate population_gradient_mc(const Vec& w, const XorConfig& cfg) {
  return population_gradients_mc({w}, cfg).front();
}

// ---------------------------------------------------------------------------
// In-plane quadrature
// ---------------------------------------------------------------------------

/// 2 int_0^inf t phi(t) (1 - Phi(c t)) dt = E[1{|x_1| >= c |x_2|} |x_2|] / 2,
/// by adaptive Gauss-Kronrod.
inline double xor_tail_integral(double c) {
  if (!(c >= 0.0)) throw ConfigError("tail ratio must be nonnegative");
  if (std::isinf(c)) return 0.0;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  auto f = [&](double t) { return 2.0 * t * inv_sqrt_2pi * std::exp(-0.5 * t * t) * 0.5 * std::erfc(c * t / std::sqrt(2.0)); };
  double error = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      f, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-12, &error);
  if (error > 1e-8) throw NumericalError("xor quadrature did not reach 1e-8 (error " + std::to_string(error) + ")");
  return value;
}

/// In-plane D(w, 0) for w in span(e_1, e_2):
/// <D, e_2> = -sign(w_1) I(|w_2 / w_1|), <D, e_1> = -sign(w_2) I(|w_1 / w_2|).
inline Vec population_gradient_quadrature(const Vec& w) {
  if (w.size() < 2) throw ConfigError("direction needs at least two coordinates");
  if (w.size() > 2 && w.tail(w.size() - 2).squaredNorm() != 0.0) {
    throw ConfigError("quadrature route needs w in span(e_1, e_2)");
  }
  const double w1 = w[0];
  const double w2 = w[1];
  if (w1 == 0.0 && w2 == 0.0) throw ConfigError("direction must be nonzero");
  Vec out(2);
  out[0] = w2 == 0.0 ? 0.0 : -sign_of(w2) * xor_tail_integral(std::abs(w1 / w2));
  out[1] = w1 == 0.0 ? 0.0 : -sign_of(w1) * xor_tail_integral(std::abs(w2 / w1));
  return out;
}

// ---------------------------------------------------------------------------
// Sign identities
// ---------------------------------------------------------------------------

enum class Verdict { holds, violated, inconclusive, not_applicable };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::holds: return "holds";
    case Verdict::violated: return "violated";
    case Verdict::inconclusive: return "inconclusive";
    case Verdict::not_applicable: return "not-applicable";
  }
  return "not-applicable";
}

/// One claim "sign(statistic) = expected" decided at 3 sigma. A strict sign
/// holds when z clears +3 and is violated below -3; a zero claim holds
/// while |z| <= 3.
struct IdentityCheck {
  std::string name;
  int expected_sign = 0;
  double estimate = 0.0;
  double std_error = 0.0;
  double z = 0.0;
  Verdict verdict = Verdict::not_applicable;
};

struct SignStructureReport {
  Vec w;
  PopulationGradientEstimate estimate;
  std::vector<IdentityCheck> checks;

  bool all_hold() const {
    for (const auto& c : checks) {
      if (c.verdict != Verdict::holds && c.verdict != Verdict::not_applicable) return false;
    }
    return true;
  }
};

namespace detail {

inline IdentityCheck decide(std::string name, int expected, double estimate, double se) {
  IdentityCheck c;
  c.name = std::move(name);
  c.expected_sign = expected;
  c.estimate = estimate;
  c.std_error = se;
  c.z = se > 0.0 ? estimate / se : (estimate == 0.0 ? 0.0 : std::copysign(kInf, estimate));
  if (expected == 0) {
    c.verdict = std::abs(c.z) <= kSigmaRule ? Verdict::holds : Verdict::violated;
  } else {
    const double signed_z = expected * c.z;
    c.verdict = signed_z > kSigmaRule    ? Verdict::holds
                : signed_z < -kSigmaRule ? Verdict::violated
                                         : Verdict::inconclusive;
  }
  return c;
}

inline SignStructureReport sign_structure_from(const Vec& w, PopulationGradientEstimate est) {
  const int d = static_cast<int>(w.size());
  SignStructureReport r;
  r.w = w;
  const Vec& D = est.mean;
  auto basis = [&](int i) {
    Vec e = Vec::Zero(d);
    e[i] = 1.0;
    return e;
  };
  r.checks.push_back(decide("sign(w2) = -sign(D1)", -sign_of(w[1]), D[0], est.std_error[0]));
  r.checks.push_back(decide("sign(w1) = -sign(D2)", -sign_of(w[0]), D[1], est.std_error[1]));
  Vec tail = Vec::Zero(d);
  if (d > 2) tail.tail(d - 2) = w.tail(d - 2);
  if (tail.squaredNorm() > 0.0) {
    r.checks.push_back(decide("sign(<D, w3:d>) = sign(w1 w2)", sign_of(w[0] * w[1]), D.dot(tail),
                              est.std_error_of(tail)));
  } else {
    r.checks.push_back({"sign(<D, w3:d>) = sign(w1 w2)", 0, 0.0, 0.0, 0.0, Verdict::not_applicable});
  }
  if (tail.squaredNorm() == 0.0) {
    // |D2| - |D1| through the estimated signs of D1, D2
    const Vec v = sign_of(D[1]) * basis(1) - sign_of(D[0]) * basis(0);
    const int expected = sign_of(std::abs(w[0]) - std::abs(w[1]));
    r.checks.push_back(decide("|w1| vs |w2| orders |D2| vs |D1|", expected, v.dot(D), est.std_error_of(v)));
  } else {
    r.checks.push_back({"|w1| vs |w2| orders |D2| vs |D1|", 0, 0.0, 0.0, 0.0, Verdict::not_applicable});
  }
  r.estimate = std::move(est);
  return r;
}

}  // namespace detail

inline SignStructureReport verify_sign_structure(const Vec& w, const XorConfig& cfg) {
  return detail::sign_structure_from(w, population_gradient_mc(w, cfg));
}

// ---------------------------------------------------------------------------
// Extremal vectors
// ---------------------------------------------------------------------------

inline constexpr double kXorCosineTol = 5e-3;

struct CandidateCheck {
  Vec w;
  Vec D;
  Vec std_error;
  double cosine = 0.0;           // cos(D, w)
  int expected_orientation = 0;  // -sign(w1 w2): +1 parallel, -1 antiparallel
  bool proportional = false;     // |cos| >= 1 - 5e-3
  bool offplane_zero = false;    // every coordinate 3..d within 3 sigma of 0
  bool passed = false;
};

/// Extremality of a unit w is rejected when r = D - <D, w> w is nonzero at
/// 3 sigma: r' C+ r against the chi-square quantile with d - 1 degrees of
/// freedom at the two-sided 3 sigma level, C the covariance of r.
struct NonCandidateCheck {
  Vec w;
  double residual = 0.0;     // ||r||
  double noise_floor = 0.0;  // sqrt(trace C)
  double chi2 = 0.0;
  double chi2_threshold = 0.0;
  bool rejected = false;
};

namespace detail {

/// P(|Z| <= 3) for a standard normal Z.
inline double three_sigma_level() { return std::erf(kSigmaRule / std::sqrt(2.0)); }

inline double pseudo_quadratic_form(const Mat& c, const Vec& r) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(c);
  const Vec& ev = eig.eigenvalues();
  const double cut = 1e-12 * std::max(ev.maxCoeff(), 0.0);
  const Vec proj = eig.eigenvectors().transpose() * r;
  double q = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > cut) q += proj[i] * proj[i] / ev[i];
  }
  return q;
}

}  // namespace detail

struct XorExtremalReport {
  XorConfig config;
  std::vector<CandidateCheck> candidates;
  std::vector<NonCandidateCheck> others;

  int extremal_count() const {
    int c = 0;
    for (const auto& k : candidates) c += k.passed;
    return c;
  }
  bool passed() const {
    for (const auto& o : others) {
      if (!o.rejected) return false;
    }
    return extremal_count() == 4;
  }
};

/// The four candidates +-(e_1 +- e_2)/sqrt(2) and `n_random` seeded random
/// unit directions, all estimated on one shared sample.
inline XorExtremalReport verify_xor_extremals(const XorConfig& cfg, int n_random = 20) {
  cfg.validate();
  const int d = cfg.d;
  std::vector<Vec> ws;
  for (double s1 : {1.0, -1.0}) {
    for (double s2 : {1.0, -1.0}) {
      Vec w = Vec::Zero(d);
      w[0] = s1 / std::sqrt(2.0);
      w[1] = s2 / std::sqrt(2.0);
      ws.push_back(w);
    }
  }
  Rng rng(cfg.seed, 0x0ca7);
  for (int i = 0; i < n_random; ++i) {
    Vec w(d);
    for (int c = 0; c < d; ++c) w[c] = rng.normal();
    ws.push_back(w.normalized());
  }
  const auto est = population_gradients_mc(ws, cfg);

  XorExtremalReport r;
  r.config = cfg;
  for (std::size_t i = 0; i < 4; ++i) {
    CandidateCheck c;
    c.w = ws[i];
    c.D = est[i].mean;
    c.std_error = est[i].std_error;
    c.cosine = cosine(c.D, c.w);
    c.expected_orientation = -sign_of(c.w[0] * c.w[1]);
    c.proportional = std::abs(c.cosine) >= 1.0 - kXorCosineTol;
    c.offplane_zero = true;
    for (int k = 2; k < d; ++k) c.offplane_zero = c.offplane_zero && std::abs(c.D[k]) <= kSigmaRule * c.std_error[k];
    c.passed = c.proportional && c.offplane_zero && sign_of(c.cosine) == c.expected_orientation;
    r.candidates.push_back(std::move(c));
  }
  for (std::size_t i = 4; i < ws.size(); ++i) {
    NonCandidateCheck o;
    o.w = ws[i];
    const Mat proj = Mat::Identity(d, d) - o.w * o.w.transpose();
    const Vec res = proj * est[i].mean;
    const Mat cov = proj * est[i].covariance * proj;
    o.residual = res.norm();
    o.noise_floor = std::sqrt(std::max(0.0, cov.trace()));
    o.chi2 = detail::pseudo_quadratic_form(cov, res);
    o.chi2_threshold = boost::math::quantile(boost::math::chi_squared(d - 1), detail::three_sigma_level());
    o.rejected = o.chi2 > o.chi2_threshold;
    r.others.push_back(std::move(o));
  }
  return r;
}

struct QuadratureAgreement {
  double angle = 0.0;
  Vec mc;
  Vec std_error;
  Vec quadrature;
  double max_abs_z = 0.0;
  bool agrees = false;
};

/// MC against quadrature on `count` evenly spread in-plane directions,
/// offset from the axes and diagonals.
inline std::vector<QuadratureAgreement> compare_quadrature(const XorConfig& cfg, int count = 50) {
  cfg.validate();
  std::vector<Vec> ws;
  std::vector<double> angles;
  for (int i = 0; i < count; ++i) {
    const double a = 2.0 * std::numbers::pi * (i + 0.37) / count;
    Vec w = Vec::Zero(cfg.d);
    w[0] = std::cos(a);
    w[1] = std::sin(a);
    ws.push_back(w);
    angles.push_back(a);
  }
  const auto est = population_gradients_mc(ws, cfg);
  std::vector<QuadratureAgreement> out;
  for (int i = 0; i < count; ++i) {
    QuadratureAgreement q;
    q.angle = angles[static_cast<std::size_t>(i)];
    q.mc = est[static_cast<std::size_t>(i)].mean.head(2);
    q.std_error = est[static_cast<std::size_t>(i)].std_error.head(2);
    q.quadrature = population_gradient_quadrature(ws[static_cast<std::size_t>(i)]);
    for (int k = 0; k < 2; ++k) q.max_abs_z = std::max(q.max_abs_z, std::abs(q.mc[k] - q.quadrature[k]) / q.std_error[k]);
    q.agrees = q.max_abs_z <= kSigmaRule;
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace alignlab
