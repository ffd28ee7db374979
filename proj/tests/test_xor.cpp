#include "alignlab/xor.hpp"

#include <gtest/gtest.h>

using namespace alignlab;

namespace {

XorConfig small_config(std::uint64_t seed = 1, int d = 6) {
  XorConfig cfg;
  cfg.d = d;
  cfg.n_samples = 200000;
  cfg.seed = seed;
  return cfg;
}

Vec direction(std::initializer_list<double> head, int d) {
  Vec w = Vec::Zero(d);
  int i = 0;
  for (double v : head) w[i++] = v;
  return w;
}

double closed_form_tail(double c) { return (1.0 - c / std::sqrt(1.0 + c * c)) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

TEST(XorQuadratureTest, MatchesClosedForm) {
  for (double c : {0.0, 0.1, 0.5, 1.0, 2.0, 7.5, 100.0}) {
    EXPECT_NEAR(xor_tail_integral(c), closed_form_tail(c), 1e-10) << c;
  }
  EXPECT_EQ(xor_tail_integral(kInf), 0.0);
}

TEST(XorQuadratureTest, DiagonalAndOrderingExamples) {
  const Vec d11 = population_gradient_quadrature(direction({1, 1}, 2));
  EXPECT_LT(d11[0], 0.0);
  EXPECT_DOUBLE_EQ(d11[0], d11[1]);
  const Vec d21 = population_gradient_quadrature(direction({2, 1}, 2));
  EXPECT_GT(std::abs(d21[1]), std::abs(d21[0]));
  const Vec d10 = population_gradient_quadrature(direction({1, 0, 0}, 3));
  EXPECT_EQ(d10[0], 0.0);
  EXPECT_NEAR(d10[1], -1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-12);
  EXPECT_THROW(population_gradient_quadrature(direction({1, 0, 0.5}, 3)), ConfigError);
  EXPECT_THROW(population_gradient_quadrature(Vec::Zero(2)), ConfigError);
}

TEST(XorMonteCarloTest, DiagonalDirection) {
  const auto cfg = small_config(2, 8);
  const auto e = population_gradient_mc(direction({1, 1}, 8), cfg);
  EXPECT_LT(e.mean[0], -3 * e.std_error[0]);
  EXPECT_LT(e.mean[1], -3 * e.std_error[1]);
  const Vec diff = direction({1, -1}, 8);
  EXPECT_LE(std::abs(e.mean.dot(diff)), 3 * e.std_error_of(diff));
  for (int k = 2; k < 8; ++k) EXPECT_LE(std::abs(e.mean[k]), 3 * e.std_error[k]) << k;
}

TEST(XorMonteCarloTest, OffPlaneDirectionSeesNoSignal) {
  const auto cfg = small_config(3);
  const auto e = population_gradient_mc(direction({0, 0, 1}, 6), cfg);
  EXPECT_LE(std::abs(e.mean[0]), 3 * e.std_error[0]);
  EXPECT_LE(std::abs(e.mean[1]), 3 * e.std_error[1]);
}

TEST(XorMonteCarloTest, AgreesWithQuadratureInPlane) {
  const auto rows = compare_quadrature(small_config(4), 20);
  int agree = 0;
  for (const auto& r : rows) agree += r.agrees;
  EXPECT_GE(agree, 19);
  for (const auto& r : rows) EXPECT_LE(r.max_abs_z, 4.5);
}

TEST(XorMonteCarloTest, DeterministicAndPermutationEquivariant) {
  const auto cfg = small_config(5);
  const Vec w = direction({0.7, -0.4, 0.3, -0.2, 0.5, 0.1}, 6);
  const auto a = population_gradient_mc(w, cfg);
  const auto b = population_gradient_mc(w, cfg);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.covariance, b.covariance);
  // permuting coordinates 3..d of w permutes the estimate in distribution
  Vec p = w;
  std::swap(p[2], p[4]);
  const auto c = population_gradient_mc(p, cfg);
  for (auto [i, j] : {std::pair{2, 4}, {4, 2}, {0, 0}, {1, 1}}) {
    const double se = std::hypot(a.std_error[i], c.std_error[j]);
    EXPECT_LE(std::abs(a.mean[i] - c.mean[j]), 4 * se) << i;
  }
}

TEST(XorMonteCarloTest, FlippingFirstCoordinateIsExact) {
  const auto cfg = small_config(6);
  const Vec w = direction({0.6, 0.8, -0.3, 0.2}, 6);
  Vec fw = w;
  fw[0] = -fw[0];
  const auto flipped = population_gradients_mc({w}, cfg, true).front();
  const auto plain = population_gradient_mc(fw, cfg);
  Vec expected = -plain.mean;
  expected[0] = -expected[0];
  EXPECT_LT((flipped.mean - expected).norm(), 1e-15);
}

TEST(XorMonteCarloTest, StdErrorScalesWithSamples) {
  auto cfg = small_config(7);
  const Vec w = direction({1, 0.5, 0.2}, 6);
  const auto a = population_gradient_mc(w, cfg);
  cfg.n_samples *= 2;
  const auto b = population_gradient_mc(w, cfg);
  for (int k = 0; k < 6; ++k) EXPECT_NEAR(a.std_error[k] / b.std_error[k], std::sqrt(2.0), 0.1 * std::sqrt(2.0));
}

TEST(XorMonteCarloTest, RejectsBadInput) {
  auto cfg = small_config();
  EXPECT_THROW(population_gradient_mc(Vec::Zero(6), cfg), ConfigError);
  EXPECT_THROW(population_gradient_mc(Vec::Ones(3), cfg), ConfigError);
  cfg.n_samples = 100;
  EXPECT_THROW(population_gradient_mc(Vec::Ones(6), cfg), ConfigError);
  cfg = small_config();
  cfg.d = 1;
  EXPECT_THROW(population_gradient_mc(Vec::Ones(1), cfg), ConfigError);
}

TEST(XorSignTest, OffPlaneSignFollowsProduct) {
  const auto cfg = small_config(8);
  const auto pos = verify_sign_structure(direction({1, 1, 0.5}, 6), cfg);
  EXPECT_EQ(pos.checks[2].verdict, Verdict::holds);
  EXPECT_GT(pos.checks[2].estimate, 0.0);
  const auto neg = verify_sign_structure(direction({1, -1, 0.5}, 6), cfg);
  EXPECT_EQ(neg.checks[2].verdict, Verdict::holds);
  EXPECT_LT(neg.checks[2].estimate, 0.0);
  EXPECT_TRUE(pos.all_hold());
  EXPECT_TRUE(neg.all_hold());
}

TEST(XorSignTest, MagnitudeOrdering) {
  const auto cfg = small_config(9);
  const auto r = verify_sign_structure(direction({0.3, 1}, 6), cfg);
  EXPECT_EQ(r.checks[3].verdict, Verdict::holds);
  EXPECT_LT(std::abs(r.estimate.mean[1]), std::abs(r.estimate.mean[0]));
  EXPECT_TRUE(r.all_hold());
}

TEST(XorSignTest, DecisionRule) {
  EXPECT_EQ(detail::decide("a", 1, 4.0, 1.0).verdict, Verdict::holds);
  EXPECT_EQ(detail::decide("a", 1, 2.0, 1.0).verdict, Verdict::inconclusive);
  EXPECT_EQ(detail::decide("a", 1, -4.0, 1.0).verdict, Verdict::violated);
  EXPECT_EQ(detail::decide("a", 0, 2.0, 1.0).verdict, Verdict::holds);
  EXPECT_EQ(detail::decide("a", 0, 4.0, 1.0).verdict, Verdict::violated);
  SignStructureReport r;
  r.checks.push_back(detail::decide("a", 1, 2.0, 1.0));
  EXPECT_FALSE(r.all_hold());
}

TEST(XorExtremalTest, FourCandidatesAndRandomRejections) {
  auto cfg = small_config(10, 8);
  cfg.n_samples = 400000;
  const auto r = verify_xor_extremals(cfg);
  ASSERT_EQ(r.candidates.size(), 4u);
  ASSERT_EQ(r.others.size(), 20u);
  for (const auto& c : r.candidates) {
    EXPECT_TRUE(c.passed);
    EXPECT_GE(std::abs(c.cosine), 0.995);
  }
  // (e1 + e2)/sqrt2 gets an antiparallel D, (e1 - e2)/sqrt2 a parallel one
  EXPECT_EQ(r.candidates[0].expected_orientation, -1);
  EXPECT_EQ(r.candidates[1].expected_orientation, 1);
  for (const auto& o : r.others) EXPECT_TRUE(o.rejected);
  EXPECT_EQ(r.extremal_count(), 4);
  EXPECT_TRUE(r.passed());
}
