#pragma once

#include "alignlab/core.hpp"
#include "alignlab/dataset.hpp"
#include "alignlab/geometry.hpp"

#include <cstdint>

namespace testing_support {

using namespace alignlab;

/// Points uniform in the annulus 0.2 <= r <= 1.5, labels uniform in [lo, hi].
inline Dataset random_planar(std::uint64_t seed, int n, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed, 0x7e57);
  Mat x(n, 2);
  Vec y(n);
  for (int k = 0; k < n; ++k) {
    const double r = rng.uniform(0.2, 1.5);
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    x.row(k) << r * std::cos(a), r * std::sin(a);
    y[k] = rng.uniform(lo, hi);
  }
  return Dataset(x, y);
}

inline ActivationPattern random_pattern(Rng& rng, int n, int zeros) {
  std::vector<std::int8_t> s(static_cast<std::size_t>(n));
  for (auto& v : s) v = (rng.next() & 1) ? 1 : -1;
  for (int z = 0; z < zeros; ++z) s[static_cast<std::size_t>(rng.next() % static_cast<std::uint64_t>(n))] = 0;
  return ActivationPattern(s);
}

/// min over eta on a grid of step `h` of ||-(1/n) sum eta_k c_k x_k||, with
/// eta fixed to 1 / gamma on +/- entries.
inline double grid_min_norm(const ActivationPattern& u, const Vec& c, const Dataset& ds, double gamma, double h) {
  Vec base = Vec::Zero(ds.d());
  std::vector<Vec> cols;
  for (int k = 0; k < ds.n(); ++k) {
    const Vec v = -c[k] * ds.x(k) / ds.n();
    if (u[k] > 0) {
      base += v;
    } else if (u[k] < 0) {
      base += gamma * v;
    } else {
      cols.push_back(v);
    }
  }
  const int steps = static_cast<int>(std::lround((1.0 - gamma) / h));
  double best = kInf;
  if (cols.empty()) return base.norm();
  if (cols.size() == 1) {
    for (int i = 0; i <= steps; ++i) best = std::min(best, (base + (gamma + i * h) * cols[0]).norm());
    return best;
  }
  if (cols.size() == 2) {
    for (int i = 0; i <= steps; ++i) {
      const Vec partial = base + (gamma + i * h) * cols[0];
      for (int j = 0; j <= steps; ++j) best = std::min(best, (partial + (gamma + j * h) * cols[1]).norm());
    }
    return best;
  }
  throw Error("grid oracle supports at most two free coefficients");
}

inline double angle_between(const Vec& a, const Vec& b) { return std::acos(cosine(a, b)); }

}  // namespace testing_support
