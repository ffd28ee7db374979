#include "alignlab/data.hpp"
#include "alignlab/geometry.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace alignlab;
using namespace testing_support;

namespace {

const LossModel kSquare{LossKind::half_square};

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// (1/3) sum y_k x_k for the builtin data, written out by hand.
Vec d_star() { return vec2((-0.75 * 1.1 - 0.5 * 0.1 + 0.125 * 0.8) / 3.0, (1.1 + 0.1 + 0.8) / 3.0); }

}  // namespace

TEST(ActivationPatternTest, BuiltinExamples) {
  const auto ds = builtin_three_point();
  EXPECT_EQ(activation_pattern(vec2(0, 1), ds).to_string(), "+++");
  EXPECT_EQ(activation_pattern(vec2(1, 0), ds).to_string(), "--+");
  EXPECT_EQ(activation_pattern(vec2(1, 0.75), ds).to_string(), "0++");
}

TEST(ActivationPatternTest, ParseAndOrder) {
  const auto p = ActivationPattern::parse("+0-");
  EXPECT_EQ(p[0], 1);
  EXPECT_EQ(p[1], 0);
  EXPECT_EQ(p[2], -1);
  EXPECT_EQ(p.to_string(), "+0-");
  EXPECT_EQ(p.negated().to_string(), "-0+");
  EXPECT_THROW(ActivationPattern::parse("+x"), Error);
  EXPECT_THROW(ActivationPattern(std::vector<std::int8_t>{2}), Error);
  EXPECT_LT(ActivationPattern::parse("-"), ActivationPattern::parse("+"));
}

TEST(ActivationPatternTest, PositiveScaleInvariance) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ds = random_planar(trial, 5);
    const Vec w = vec2(rng.normal(), rng.normal());
    const double c = std::exp(rng.uniform(-20, 20));
    EXPECT_EQ(activation_pattern(w, ds), activation_pattern(c * w, ds));
  }
}

TEST(EnumerateCones, BuiltinHasSixArcsAndSixRays) {
  const auto ds = builtin_three_point();
  const auto e = enumerate_cones(ds);
  EXPECT_FALSE(e.approximate);
  ASSERT_EQ(e.cones.size(), 12u);
  int arcs = 0, rays = 0;
  std::set<std::string> seen;
  for (const auto& c : e.cones) {
    (c.zero_set_dim == 0 ? arcs : rays)++;
    EXPECT_TRUE(seen.insert(c.pattern.to_string()).second);
    EXPECT_NEAR(c.representative.norm(), 1.0, 1e-12);
    EXPECT_EQ(activation_pattern(c.representative, ds), c.pattern);
  }
  EXPECT_EQ(arcs, 6);
  EXPECT_EQ(rays, 6);
}

TEST(EnumerateCones, SinglePoint) {
  Mat x(1, 2);
  x << 0.4, -1.3;
  const auto e = enumerate_cones(Dataset(x, Vec::Ones(1)));
  std::vector<std::string> got;
  for (const auto& c : e.cones) got.push_back(c.pattern.to_string());
  EXPECT_EQ(got, (std::vector<std::string>{"-", "0", "+"}));
}

TEST(EnumerateCones, CollinearPointsDeduplicate) {
  Mat x(3, 2);
  x << 1.0, 0.5, 2.0, 1.0, -0.5, 1.0;
  const auto e = enumerate_cones(Dataset(x, Vec::Ones(3)));
  // Two distinct lines through the origin: 4 arcs + 4 rays.
  EXPECT_EQ(e.cones.size(), 8u);
  std::set<std::string> seen;
  for (const auto& c : e.cones) {
    EXPECT_TRUE(seen.insert(c.pattern.to_string()).second);
    EXPECT_EQ(activation_pattern(c.representative, Dataset(x, Vec::Ones(3))), c.pattern);
  }
}

TEST(EnumerateCones, RandomRoundTripAndCount) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const int n = 2 + static_cast<int>(s % 5);
    const auto ds = random_planar(s, n);
    const auto e = enumerate_cones(ds);
    // n distinct lines split the plane into 2n arcs and 2n rays.
    EXPECT_EQ(e.cones.size(), static_cast<std::size_t>(4 * n));
    for (const auto& c : e.cones) {
      EXPECT_EQ(activation_pattern(c.representative, ds), c.pattern);
      EXPECT_NEAR(c.representative.norm(), 1.0, 1e-12);
    }
    for (std::size_t i = 1; i < e.cones.size(); ++i) EXPECT_LT(e.cones[i - 1].pattern, e.cones[i].pattern);
  }
}

TEST(EnumerateCones, SampledModeHigherDimension) {
  Mat x(4, 3);
  x << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1;
  Dataset ds(x, Vec::Ones(4));
  const auto e = enumerate_cones(ds);
  EXPECT_TRUE(e.approximate);
  // Four generic planes in R^3 cut 14 regions.
  EXPECT_EQ(e.cones.size(), 14u);
  for (const auto& c : e.cones) {
    EXPECT_EQ(c.zero_set_dim, 0);
    EXPECT_EQ(activation_pattern(c.representative, ds), c.pattern);
  }
}

TEST(MinNormSubgradient, AllActiveIsMeanOfLabelledPoints) {
  const auto ds = builtin_three_point();
  const auto r = min_norm_subgradient(ActivationPattern::parse("+++"), zero_output_coefficients(ds, kSquare), ds, 0.0);
  EXPECT_LE((r.vector - d_star()).norm(), 1e-15);
  EXPECT_NEAR(r.vector[0], -0.25833, 1e-5);
  EXPECT_NEAR(r.vector[1], 0.66667, 1e-5);
}

TEST(MinNormSubgradient, AllInactiveReluIsZero) {
  const auto ds = builtin_three_point();
  const auto r = min_norm_subgradient(ActivationPattern::parse("---"), zero_output_coefficients(ds, kSquare), ds, 0.0);
  EXPECT_EQ(r.vector.norm(), 0.0);
}

TEST(MinNormSubgradient, OneFreeCoefficientMatchesGrid) {
  const auto ds = builtin_three_point();
  const auto u = ActivationPattern::parse("0++");
  const Vec c = zero_output_coefficients(ds, kSquare);
  const auto r = min_norm_subgradient(u, c, ds, 0.0);
  EXPECT_NEAR(r.vector.norm(), grid_min_norm(u, c, ds, 0.0, 1e-3), 1e-6);
  EXPECT_LE(r.qp_gap, 1e-10);
  EXPECT_GE(r.eta[0], 0.0);
  EXPECT_LE(r.eta[0], 1.0);
  EXPECT_EQ(r.eta[1], 1.0);
}

TEST(MinNormSubgradient, RepresentationIdentity) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ds = random_planar(100 + trial, 5);
    const double gamma = trial % 2 ? 0.0 : rng.uniform(0, 1);
    const auto u = random_pattern(rng, 5, 2);
    Vec c(5);
    for (int k = 0; k < 5; ++k) c[k] = rng.uniform(-1, 1);
    const auto r = min_norm_subgradient(u, c, ds, gamma);
    Vec rebuilt = Vec::Zero(2);
    for (int k = 0; k < 5; ++k) {
      if (u[k] > 0) {
        EXPECT_EQ(r.eta[k], 1.0);
      }
      if (u[k] < 0) {
        EXPECT_EQ(r.eta[k], gamma);
      }
      EXPECT_GE(r.eta[k], gamma);
      EXPECT_LE(r.eta[k], 1.0);
      rebuilt -= r.eta[k] * c[k] * ds.x(k) / 5.0;
    }
    EXPECT_LE((rebuilt - r.vector).norm(), 1e-14);
    EXPECT_LE(r.qp_gap, 1e-10);
  }
}

TEST(MinNormSubgradient, DominatesGridOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3 + trial % 4;
    const auto ds = random_planar(200 + trial, n);
    const double gamma = trial % 3 == 0 ? 0.25 : 0.0;
    const auto u = random_pattern(rng, n, 1 + trial % 2);
    Vec c(n);
    for (int k = 0; k < n; ++k) c[k] = rng.uniform(-1, 1);
    const auto r = min_norm_subgradient(u, c, ds, gamma);
    const double grid = grid_min_norm(u, c, ds, gamma, gamma == 0.25 ? 7.5e-4 : 1e-3);
    EXPECT_LE(r.vector.norm(), grid + 1e-12) << "trial " << trial;
    EXPECT_NEAR(r.vector.norm(), grid, 1e-6) << "trial " << trial;
  }
}

TEST(MinNormSubgradient, RejectsBadGamma) {
  const auto ds = builtin_three_point();
  EXPECT_THROW(min_norm_subgradient(ActivationPattern::parse("+++"), Vec::Ones(3), ds, 1.5), Error);
  EXPECT_THROW(min_norm_subgradient(ActivationPattern::parse("++"), Vec::Ones(3), ds, 0.0), Error);
}

TEST(GValue, Examples) {
  const auto ds = builtin_three_point();
  const Vec dhat = d_star().normalized();
  EXPECT_NEAR(g_value(dhat, ds, kSquare, 0.0), d_star().norm(), 1e-14);
  EXPECT_NEAR(d_star().norm(), 0.71497, 1e-5);
  const Vec w = vec2(1.0, -5.0).normalized();
  ASSERT_EQ(activation_pattern(w, ds).to_string(), "---");
  EXPECT_EQ(g_value(w, ds, kSquare, 0.0), 0.0);
  EXPECT_THROW(g_value(vec2(2, 0), ds, kSquare, 0.0), Error);
}

TEST(GValue, LinearActivation) {
  const auto ds = builtin_three_point();
  for (int i = 0; i < 64; ++i) {
    const Vec w = vec2(std::cos(0.1 * i), std::sin(0.1 * i));
    EXPECT_NEAR(g_value(w, ds, kSquare, 1.0), w.dot(d_star()), 1e-14);
  }
}

TEST(GValue, LabelScalingScalesEverything) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ds = random_planar(300 + trial, 4, 0.1, 1.0);
    const double c = rng.uniform(0.1, 10);
    const Dataset scaled(ds.features(), c * ds.labels());
    for (int i = 0; i < 32; ++i) {
      const Vec w = vec2(std::cos(0.2 * i), std::sin(0.2 * i));
      EXPECT_NEAR(g_value(w, scaled, kSquare, 0.0), c * g_value(w, ds, kSquare, 0.0), 1e-12);
    }
    const auto a = find_extremal_vectors(ds, kSquare, 0.0);
    const auto b = find_extremal_vectors(scaled, kSquare, 0.0);
    ASSERT_EQ(a.vectors.size(), b.vectors.size());
    for (std::size_t i = 0; i < a.vectors.size(); ++i) {
      EXPECT_EQ(a.vectors[i].pattern, b.vectors[i].pattern);
      EXPECT_LE((c * a.vectors[i].D - b.vectors[i].D).norm(), 1e-12);
    }
  }
}

TEST(ExtremalVectors, BuiltinHasExactlyOne) {
  const auto ds = builtin_three_point();
  const auto ex = find_extremal_vectors(ds, kSquare, 0.0);
  ASSERT_EQ(ex.vectors.size(), 1u);
  EXPECT_TRUE(ex.genericity_violations.empty());
  const auto& v = ex.vectors[0];
  EXPECT_EQ(v.pattern.to_string(), "+++");
  EXPECT_EQ(v.kind, ExtremumKind::local_max);
  EXPECT_EQ(v.proportionality, 1);
  EXPECT_LE((v.D - d_star()).norm(), 1e-10);
}

TEST(ExtremalVectors, SinglePoint) {
  Mat x(1, 2);
  x << 1.0, 0.0;
  const Dataset ds(x, Vec::Ones(1));
  const auto ex = find_extremal_vectors(ds, kSquare, 0.0);
  ASSERT_EQ(ex.vectors.size(), 1u);
  EXPECT_EQ(ex.vectors[0].pattern.to_string(), "+");
  EXPECT_LE((ex.vectors[0].D - vec2(1, 0)).norm(), 1e-15);
}

TEST(ExtremalVectors, AreMinimalNormOfTheirSet) {
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto ds = random_planar(400 + s, 3 + static_cast<int>(s % 4));
    const Vec c = zero_output_coefficients(ds, kSquare);
    for (const auto& e : find_extremal_vectors(ds, kSquare, 0.0).vectors) {
      EXPECT_EQ(e.D.norm() > 0.0, true);
      const auto signs = activation_pattern(e.proportionality * e.D, ds);
      EXPECT_EQ(signs, e.pattern);
      // Every element of the set is D plus a combination of free columns;
      // orthogonality to those columns makes D the minimiser.
      for (int k = 0; k < ds.n(); ++k) {
        if (e.pattern[k] == 0) {
          EXPECT_NEAR(e.D.dot(ds.x(k)), 0.0, 1e-12);
        }
      }
      EXPECT_LE(e.D.norm(), grid_min_norm(e.pattern, c, ds, 0.0, 1e-3) + 1e-12);
    }
  }
}

TEST(GridOracle, BuiltinSingleMaximum) {
  const auto ds = builtin_three_point();
  const auto o = grid_oracle_critical_directions(ds, kSquare, 0.0, 100000);
  ASSERT_EQ(o.critical.size(), 1u);
  EXPECT_EQ(o.critical[0].kind, ExtremumKind::local_max);
  EXPECT_LE(angle_between(o.critical[0].direction, d_star()), 1e-3);
  EXPECT_EQ(o.saddles, 0);
}

TEST(GridOracle, LinearActivationHasTwoCriticalDirections) {
  const auto ds = builtin_three_point();
  const auto o = grid_oracle_critical_directions(ds, kSquare, 1.0, 20000);
  ASSERT_EQ(o.critical.size(), 2u);
  for (const auto& c : o.critical) {
    const double s = c.kind == ExtremumKind::local_max ? 1.0 : -1.0;
    EXPECT_LE(angle_between(c.direction, s * d_star()), 1e-6);
  }
  EXPECT_EQ(o.saddles, 0);
}

TEST(GridOracle, RejectsOtherDimensionsAndCoarseGrids) {
  Mat x(2, 3);
  x << 1, 0, 0, 0, 1, 0;
  EXPECT_THROW(grid_oracle_critical_directions(Dataset(x, Vec::Ones(2)), kSquare, 0.0, 1000),
               UnsupportedDimensionError);
  EXPECT_THROW(grid_oracle_critical_directions(builtin_three_point(), kSquare, 0.0, 999), Error);
}

TEST(GridOracle, AgreesWithEnumerationOnRandomData) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto ds = random_planar(500 + s, 3 + static_cast<int>(s % 4));
    const double gamma = s % 4 == 3 ? 0.2 : 0.0;
    const auto ex = find_extremal_vectors(ds, kSquare, gamma);
    const auto o = grid_oracle_critical_directions(ds, kSquare, gamma, 20000);
    EXPECT_EQ(o.saddles, 0) << "seed " << s;
    EXPECT_TRUE(ex.genericity_violations.empty());
    EXPECT_TRUE(ex.saddles.empty());
    ASSERT_EQ(ex.vectors.size(), o.critical.size()) << "seed " << s;
    for (const auto& e : ex.vectors) {
      double best = kInf;
      const ExtremumKind* kind = nullptr;
      for (const auto& c : o.critical) {
        const double a = angle_between(e.direction(), c.direction);
        if (a < best) {
          best = a;
          kind = &c.kind;
        }
      }
      EXPECT_LE(best, 1e-3) << "seed " << s;
      EXPECT_EQ(*kind, e.kind) << "seed " << s;
    }
  }
}

TEST(Constants, BuiltinValues) {
  const auto ds = builtin_three_point();
  const auto k = compute_constants(ds, kSquare, 0.0, 0.1, 0.25);
  EXPECT_NEAR(k.d_max, d_star().norm(), 1e-14);
  EXPECT_NEAR(k.tau(0.25, 1e-3), 0.25 * std::log(1000.0) / d_star().norm(), 1e-12);
  EXPECT_NEAR(k.tau(0.25, 1e-3), 2.415, 1e-3);
  EXPECT_LE(k.d_min, k.d_max);
  EXPECT_NEAR(k.d_min, k.d_min_independent, 1e-9);
  EXPECT_GT(k.alpha_min, 0.0);
  EXPECT_LE(k.alpha_min, 1.0);
  EXPECT_GE(k.delta_0, 0.0);
  EXPECT_EQ(k.cones.size(), 12u);
  for (const auto& c : k.cones) {
    if (c.contains_zero) continue;
    EXPECT_LE(k.d_min, c.norm + 1e-15);
    EXPECT_LE(c.norm, k.d_max + 1e-15);
  }
}

TEST(Constants, LambdaStarTranscription) {
  const auto ds = builtin_three_point();
  const auto k = compute_constants(ds, kSquare, 0.0, 0.1, 0.25);
  const double sum_sq = 1.5625 + 1.25 + 1.015625;
  const double label = std::min({1.1 / std::sqrt(1.5625), 0.1 / std::sqrt(1.25), 0.8 / std::sqrt(1.015625)});
  const double inner = std::min({k.alpha_min * k.alpha_min / 8 * k.d_min, 0.01 / 4 * k.d_min, k.delta_0});
  const double expect = std::pow(std::min(3.0 / sum_sq * inner, label), 1.0 / (2.0 - 1.0));
  EXPECT_NEAR(k.lambda_star_value, expect, 1e-15);
  EXPECT_NEAR(k.lambda_star(0.1, 0.25), expect, 1e-15);
  EXPECT_GT(k.lambda_star(0.5, 0.1), 0.0);
}

TEST(Constants, LinearActivationClosedForm) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto ds = random_planar(600 + s, 4, 0.2, 1.0);
    const auto k = compute_constants(ds, kSquare, 1.0, 0.2, 0.2);
    Vec dbar = Vec::Zero(2);
    for (int i = 0; i < ds.n(); ++i) dbar += ds.y(i) * ds.x(i) / ds.n();
    double min_cos = kInf;
    for (int i = 0; i < ds.n(); ++i) min_cos = std::min(min_cos, std::abs(cosine(dbar, ds.x(i))));
    EXPECT_NEAR(k.d_max, dbar.norm(), 1e-14);
    EXPECT_NEAR(k.d_min, dbar.norm(), 1e-14);
    EXPECT_NEAR(k.alpha_min, min_cos, 1e-9);
    EXPECT_EQ(k.delta_0_prime, kInf);
    EXPECT_NEAR(k.delta_0_second, dbar.norm() * min_cos, 1e-12);
    EXPECT_TRUE(std::isfinite(k.delta_0));
    EXPECT_GT(k.delta_0, 0.0);
    EXPECT_GT(k.lambda_star_value, 0.0);
  }
}

TEST(Constants, RejectsBadArguments) {
  const auto ds = builtin_three_point();
  EXPECT_THROW(compute_constants(ds, kSquare, 0.0, 0.0, 0.25), Error);
  EXPECT_THROW(compute_constants(ds, kSquare, 0.0, 0.1, 0.34), Error);
  Mat x(3, 3);
  x << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  EXPECT_THROW(compute_constants(Dataset(x, Vec::Ones(3)), kSquare, 0.0, 0.1, 0.25), UnsupportedDimensionError);
}
