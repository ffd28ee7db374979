#include "alignlab/data.hpp"
#include "alignlab/diagnostics.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace alignlab;
using namespace testing_support;

namespace {

const LossModel kSquare{LossKind::half_square};

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

NetworkState two_neurons(double a0, const Vec& w0, double a1, const Vec& w1) {
  NetworkState s;
  s.a = vec2(a0, a1);
  s.w = RowMat(2, 2);
  s.w.row(0) = w0.transpose();
  s.w.row(1) = w1.transpose();
  return s;
}

Vec d_star() { return vec2((-0.75 * 1.1 - 0.5 * 0.1 + 0.125 * 0.8) / 3.0, (1.1 + 0.1 + 0.8) / 3.0); }

// Small version of the reference experiment, shared by the phase tests.
struct SmallRun {
  Dataset ds = builtin_three_point();
  InitConfig init;
  Trace trace;
  AlignmentConstants constants;

  SmallRun() {
    init.lambda = 1e-3;
    init.m = 200;
    init.seed = 7;
    auto s = init_network(init, 2);
    TrainConfig cfg;
    cfg.max_steps = 80000;
    cfg.record_every = 24;
    cfg.dense_until = 40000;
    cfg.sparse_every = 2000;
    trace = train(s, ds, cfg, init);
    constants = compute_constants(ds, kSquare, 0.0, 0.1, 0.25);
  }
};

const SmallRun& small_run() {
  static const SmallRun run;
  return run;
}

}  // namespace

TEST(ClassifyTest, TwoNeuronExample) {
  const auto ds = builtin_three_point();
  const auto s = two_neurons(0.1, ds.x(0), -0.1, ds.x(1));
  const auto c = classify_neurons(s, ds);
  EXPECT_EQ(c.positive, std::vector<int>{0});
  EXPECT_EQ(c.negative, std::vector<int>{1});
  EXPECT_TRUE(c.rest.empty());
}

TEST(ClassifyTest, InactivePositiveNeuronIsRestAndZeroOutputDegenerate) {
  const auto ds = builtin_three_point();
  const auto s = two_neurons(0.1, vec2(0.0, -1.0), 0.0, vec2(0.0, 1.0));
  const auto c = classify_neurons(s, ds);
  EXPECT_EQ(c.rest, std::vector<int>{0});
  EXPECT_EQ(c.degenerate, std::vector<int>{1});
}

TEST(ClassifyTest, InvariantUnderPositiveRescaling) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ds = random_planar(seed, 5);
    InitConfig cfg;
    cfg.m = 50;
    cfg.seed = seed;
    auto s = init_network(cfg, 2);
    const auto c = classify_neurons(s, ds);
    s.a *= 37.5;
    s.w *= 0.0125;
    EXPECT_EQ(classify_neurons(s, ds), c);
  }
}

TEST(ClassifyTest, RestFractionMatchesDeadArc) {
  const auto ds = builtin_three_point();
  const auto cones = enumerate_cones(ds);
  double span = -1.0;
  for (const auto& cone : cones.cones) {
    if (cone.pattern.to_string() != "---") continue;
    span = detail::angle_of(cone.arc->second) - detail::angle_of(cone.arc->first);
    if (span < 0.0) span += 2.0 * std::numbers::pi;
  }
  ASSERT_GT(span, 0.0);
  InitConfig cfg;
  cfg.m = 40000;
  cfg.seed = 3;
  const auto c = classify_neurons(init_network(cfg, 2), ds);
  const double p = 0.5 * span / (2.0 * std::numbers::pi);
  const double sd = std::sqrt(p * (1 - p) / cfg.m);
  EXPECT_NEAR(static_cast<double>(c.rest.size()) / cfg.m, p, 4 * sd);
}

TEST(AlignmentTest, DeadNeuronInNegativeCone) {
  const auto ds = builtin_three_point();
  const auto s = two_neurons(0.1, vec2(0.0, -1.0), -0.2, vec2(0.1, -0.5));
  const auto scores = alignment_scores(s, ds, kSquare, 0.0, {});
  ASSERT_EQ(scores.size(), 2u);
  for (const auto& sc : scores) {
    EXPECT_EQ(sc.status, AlignmentStatus::dead);
    EXPECT_EQ(sc.D.norm(), 0.0);
  }
}

TEST(AlignmentTest, AlignedAndAntiProportional) {
  const auto ds = builtin_three_point();
  const double gamma = 0.5;
  const auto ext = find_extremal_vectors(ds, kSquare, gamma);
  // w = -c D* lies in the all-negative cone, where D = gamma D*.
  const auto s = two_neurons(0.2, 0.3 * d_star(), -0.2, -0.3 * d_star());
  for (const auto& list : {ext.vectors, std::vector<ExtremalVector>{}}) {
    const auto scores = alignment_scores(s, ds, kSquare, gamma, list);
    ASSERT_EQ(scores.size(), 2u);
    EXPECT_EQ(scores[0].status, AlignmentStatus::aligned_positive);
    EXPECT_NEAR(scores[0].cosine, 1.0, 1e-12);
    EXPECT_EQ(scores[1].status, AlignmentStatus::anti_proportional);
    EXPECT_NEAR(scores[1].cosine, -1.0, 1e-12);
    EXPECT_LT((scores[1].D - gamma * d_star()).norm(), 1e-12);
    EXPECT_NEAR(scores[1].inner, gamma * d_star().dot(-0.3 * d_star()) / -0.2, 1e-12);
  }
}

TEST(AlignmentTest, StatusProperties) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ds = random_planar(seed, 5);
    InitConfig cfg;
    cfg.m = 60;
    cfg.seed = seed;
    const auto s = init_network(cfg, 2);
    const auto ext = find_extremal_vectors(ds, kSquare, 0.0);
    for (const auto& sc : alignment_scores(s, ds, kSquare, 0.0, ext.vectors)) {
      EXPECT_EQ(sc.status == AlignmentStatus::dead, sc.D.norm() == 0.0);
      EXPECT_GE(sc.cosine, -1.0);
      EXPECT_LE(sc.cosine, 1.0);
      if (sc.status == AlignmentStatus::aligned_positive) {
        EXPECT_GE(sc.cosine, 0.99);
      }
    }
  }
}

TEST(AlignmentTest, UnalignedNeuronIsUnresolved) {
  const auto ds = builtin_three_point();
  const auto s = two_neurons(0.2, vec2(1.0, 0.3), 0.2, vec2(-1.0, 0.3));
  const auto ext = find_extremal_vectors(ds, kSquare, 0.0);
  for (const auto& sc : alignment_scores(s, ds, kSquare, 0.0, ext.vectors)) {
    EXPECT_EQ(sc.status, AlignmentStatus::unresolved);
  }
}

TEST(ConditionTest, FullAlphaRequiresPositiveInner) {
  const auto ds = random_planar(4, 6);
  InitConfig cfg;
  cfg.m = 300;
  cfg.seed = 4;
  const auto s = init_network(cfg, 2);
  const auto screen = check_condition_neurons(s, ds, kSquare, 0.0, 1.0);
  ZeroSubgradients subgrad(ds, kSquare, 0.0);
  for (int j = 0; j < s.m(); ++j) {
    const Vec w = s.w.row(j).transpose();
    EXPECT_EQ(static_cast<bool>(screen.passes[static_cast<std::size_t>(j)]), subgrad.at(w).dot(w) / s.a[j] > 0.0);
  }
  EXPECT_TRUE(screen.point2_by_construction);
}

TEST(ConditionTest, TinyAlphaKeepsAllButAntipodes) {
  const auto ds = builtin_three_point();
  InitConfig cfg;
  cfg.m = 500;
  cfg.seed = 5;
  auto s = init_network(cfg, 2);
  // an exact antipode: a < 0 and w along D* in the fully active cone
  s.a[0] = -0.01;
  s.w.row(0) = 0.01 * d_star().normalized().transpose();
  const auto screen = check_condition_neurons(s, ds, kSquare, 0.0, 1e-9);
  ZeroSubgradients subgrad(ds, kSquare, 0.0);
  EXPECT_FALSE(screen.passes[0]);
  for (int j = 1; j < s.m(); ++j) {
    const bool live = subgrad.at(s.w.row(j).transpose()).norm() > 0.0;
    EXPECT_EQ(static_cast<bool>(screen.passes[static_cast<std::size_t>(j)]), live) << j;
  }
}

TEST(ConditionTest, ReferenceInitPassFraction) {
  const auto ds = builtin_three_point();
  InitConfig cfg;
  cfg.m = 2000;
  cfg.seed = 0;
  const auto screen = check_condition_neurons(init_network(cfg, 2), ds, kSquare, 0.0, 0.1);
  EXPECT_GE(screen.pass_fraction, 0.95);
  EXPECT_THROW(check_condition_neurons(init_network(cfg, 2), ds, kSquare, 0.0, 0.0), ConfigError);
}

TEST(MixedMassTest, Examples) {
  const auto ds = builtin_three_point();
  NetworkState empty;
  empty.a = Vec(0);
  empty.w = RowMat(0, 2);
  EXPECT_EQ(mixed_sign_mass(empty, ds), 0.0);
  // (1, 0.6) is positive on x_3 and negative on x_1; (0, 1) is fully active
  const auto s = two_neurons(1.0, vec2(1.0, 0.6), 1.0, vec2(0.0, 1.0));
  EXPECT_DOUBLE_EQ(mixed_sign_mass(s, ds), 0.5 * 1.36);
}

TEST(PhaseTest, SmallRunHasOrderedPhases) {
  const auto& run = small_run();
  const auto r = detect_phases(run.trace, run.ds, run.constants, 0.25, 0.05, 0.05);
  ASSERT_TRUE(r.tau && r.tau_2 && r.tau_3);
  EXPECT_LT(*r.tau, *r.tau_2);
  EXPECT_LT(*r.tau_2, *r.tau_3);
  EXPECT_NEAR(*r.tau, r.tau_theory, run.trace.config.lr * run.trace.config.record_every);
  EXPECT_GT(r.at_tau_2->min_correlation, 0.0);
  EXPECT_GE(r.at_tau_2->positive_mass, 0.05);
  EXPECT_LE(r.at_tau_3->beta_gap, 0.05);
  EXPECT_GE(r.at_tau_3->min_pairwise_cosine, 0.99);
  EXPECT_EQ(r.at_tau->growth_violations, 0);
  EXPECT_EQ(r.at_tau->negative_violations, 0);
  EXPECT_EQ(r.frozen_violations, 0);
  EXPECT_LE(r.negative_mass_max_increase, run.trace.config.lr);
  EXPECT_TRUE(r.record_stride_ok);
  EXPECT_EQ(r.mixed_mass.size(), run.trace.snapshots.size());
}

TEST(PhaseTest, MonotoneInThreshold) {
  const auto& run = small_run();
  double last = 0.0;
  for (double eps2 : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    const auto r = detect_phases(run.trace, run.ds, run.constants, 0.25, eps2, 0.05);
    ASSERT_TRUE(r.tau_2);
    EXPECT_GE(*r.tau_2, last);
    last = *r.tau_2;
  }
}

TEST(PhaseTest, UnreachedPhasesAreNotDetected) {
  const auto& run = small_run();
  Trace cut = run.trace;
  cut.snapshots.resize(200);  // stops near t = 4.8
  const auto r = detect_phases(cut, run.ds, run.constants, 0.25, 0.05, 0.05);
  EXPECT_TRUE(r.tau);
  EXPECT_FALSE(r.tau_2);
  EXPECT_FALSE(r.tau_3);
  EXPECT_FALSE(r.warnings.empty());
  const auto huge = detect_phases(run.trace, run.ds, run.constants, 0.25, 1e6, 0.05);
  EXPECT_FALSE(huge.tau_2);
}

TEST(PhaseTest, CoarseStrideIsFlagged) {
  const auto& run = small_run();
  Trace coarse = run.trace;
  coarse.config.record_every = 1000;
  const auto r = detect_phases(coarse, run.ds, run.constants, 0.25, 0.05, 0.05);
  EXPECT_FALSE(r.record_stride_ok);
}

TEST(PhaseTest, RequiresInitConfig) {
  const auto& run = small_run();
  Trace bare = run.trace;
  bare.init.reset();
  EXPECT_THROW(detect_phases(bare, run.ds, run.constants, 0.25, 0.05, 0.05), ConfigError);
  EXPECT_THROW(detect_phases(run.trace, run.ds, run.constants, 0.25, 0.0, 0.05), ConfigError);
}

TEST(SpuriousTest, SmallRunConvergesToOls) {
  const auto& run = small_run();
  const auto fit = ols_estimator(run.ds);
  const auto r = verify_spurious_convergence(run.trace, run.ds, 0.02, 0.05 * fit.loss);
  EXPECT_TRUE(r.passed());
  EXPECT_TRUE(r.interpolation_failed);
  EXPECT_FALSE(r.linear_network);
  EXPECT_NEAR(r.loss_star, fit.loss, 1e-15);
  EXPECT_NEAR(r.final_loss, 0.0875214, 0.05 * 0.0875214);
  int total = 0;
  for (const auto& [pattern, count] : r.cone_histogram) total += count;
  EXPECT_EQ(total, 200);
}

TEST(SpuriousTest, EarlySnapshotFailsResidualCheck) {
  const auto& run = small_run();
  Trace cut = run.trace;
  cut.snapshots.resize(200);
  const auto r = verify_spurious_convergence(cut, run.ds, 0.02, 0.05 * 0.0875214);
  EXPECT_FALSE(r.passed());
  EXPECT_FALSE(r.checks[0].passed);
}

TEST(SpuriousTest, LinearNetworkIsFlagged) {
  const auto ds = builtin_three_point();
  InitConfig init;
  init.m = 20;
  init.lambda = 0.1;
  auto s = init_network(init, 2);
  TrainConfig cfg;
  cfg.gamma = 1.0;
  cfg.lr = 1e-2;
  cfg.max_steps = 20000;
  cfg.record_every = 1000;
  const auto trace = train(s, ds, cfg, init);
  const auto r = verify_spurious_convergence(trace, ds, 0.02, 0.05 * 0.0875214);
  EXPECT_TRUE(r.linear_network);
  EXPECT_FALSE(r.note.empty());
  EXPECT_TRUE(r.checks[0].passed);
  EXPECT_TRUE(r.interpolation_failed);
}

TEST(SpuriousTest, ReproducibleVerdicts) {
  const auto& run = small_run();
  const auto a = verify_spurious_convergence(run.trace, run.ds, 0.02, 0.004);
  const auto b = verify_spurious_convergence(run.trace, run.ds, 0.02, 0.004);
  EXPECT_EQ(a.residuals, b.residuals);
  EXPECT_EQ(a.final_loss, b.final_loss);
  EXPECT_EQ(a.cone_histogram, b.cone_histogram);
  ASSERT_EQ(a.checks.size(), b.checks.size());
  for (std::size_t i = 0; i < a.checks.size(); ++i) {
    EXPECT_EQ(a.checks[i].value, b.checks[i].value);
    EXPECT_EQ(a.checks[i].passed, b.checks[i].passed);
  }
}
