#include "kao/harness.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>

#include "kao/metrics.hpp"
#include "test_util.hpp"

namespace kao {
namespace {

using testing::uniform_design;

const std::vector<std::string> kCovariates{"a", "b", "c", "d", "e"};

std::vector<RuleSpec> all_rule_specs() {
  std::vector<RuleSpec> out;
  for (Rule r : kAllRules) {
    RuleSpec s;
    s.rule = r;
    if (r == Rule::Ewa) s.eta = 0.01;
    out.push_back(s);
  }
  return out;
}

ObservationStream static_stream(Eigen::Index T, std::uint64_t seed, double sigma2 = 1.0) {
  Rng rng(seed);
  const Design X = uniform_design(T, 5, rng);
  Vector theta(5);
  theta << 3.0, -2.0, 1.0, 0.0, 0.0;
  const StateSpaceModel truth(Matrix::Identity(5, 5), Matrix::Zero(5, 5), sigma2, theta, Matrix::Identity(5, 5));
  return simulate_ssm(truth, X, seed + 1);
}

TEST(BankTest, StudySubsetsHaveExpectedComposition) {
  const auto subsets = study_subsets(5, {1, 0}, 28);
  ASSERT_EQ(subsets.size(), 28U);
  EXPECT_EQ(subsets.front(), (std::vector<Eigen::Index>{0, 1}));
  std::array<int, 6> by_size{};
  for (const auto& s : subsets) ++by_size[s.size()];
  EXPECT_EQ(by_size[1], 5);
  EXPECT_EQ(by_size[2], 10);  // the true pair plus 9 others
  EXPECT_EQ(by_size[3], 10);
  EXPECT_EQ(by_size[4], 3);
  const auto bank = build_subset_bank(kCovariates, subsets, ExpertTemplate{});
  EXPECT_EQ(bank.size(), 28);
  EXPECT_EQ(bank[0].name, "a+b");
}

TEST(BankTest, SubsetValidation) {
  const auto one = build_subset_bank(kCovariates, {{0, 1, 2, 3, 4}}, ExpertTemplate{});
  EXPECT_EQ(one.size(), 1);
  EXPECT_EQ(one[0].model.dim(), 5);
  EXPECT_THROW(build_subset_bank(kCovariates, {{}}, ExpertTemplate{}), std::invalid_argument);
  EXPECT_THROW(build_subset_bank(kCovariates, {{0, 1}, {1, 0}}, ExpertTemplate{}), std::invalid_argument);
  EXPECT_THROW(build_subset_bank(kCovariates, {{7}}, ExpertTemplate{}), std::invalid_argument);
}

TEST(BankTest, ExpertSettingDesign) {
  Design f(3, 2);
  f << 1, 2, 3, 4, 5, 6;
  Vector y(3);
  y << 10, 20, 30;
  const Design x = expert_setting_design(f, y);
  EXPECT_EQ(x(0, 3), 0.0);
  EXPECT_EQ(x(0, 4), 0.0);
  EXPECT_EQ(x(1, 3), 9.0);
  EXPECT_EQ(x(2, 4), 16.0);
  const auto bank = build_expert_setting_bank({"E1", "E2"}, ExpertTemplate{});
  EXPECT_EQ(bank[1].columns, (std::vector<Eigen::Index>{0, 2, 4}));
}

TEST(RunOnlineTest, SingleExpertAggregateIsTheExpert) {
  const auto stream = static_stream(300, 1);
  const auto bank = build_subset_bank(kCovariates, {{0, 1}}, ExpertTemplate{1.0, 0.0, 1.0, 0.0, 1.0});
  AggregationOptions agg;
  agg.burn_in = 20;
  const auto rec = run_online(bank, stream, all_rule_specs(), agg);
  for (const auto& rr : rec.rules) {
    EXPECT_EQ(rr.y_agg, rec.trace.y_hat.col(0)) << to_string(rr.spec.rule);
  }
}

TEST(RunOnlineTest, UnitNoiseRiskMatchesRecursion) {
  const auto stream = static_stream(50, 2);
  const ExpertTemplate tmpl{1.0, 0.1, 1.0, 0.0, 2.0};
  const auto bank = build_subset_bank(kCovariates, {{0, 2}}, tmpl);
  const auto tr = run_experts(bank, stream.X, stream.y);
  const auto model = tmpl.instantiate(2);
  auto s = kalman_init(model);
  for (Eigen::Index t = 0; t < 50; ++t) {
    Vector x(2);
    x << stream.X(t, 0), stream.X(t, 2);
    const auto f = kalman_predict(model, s, x);
    EXPECT_DOUBLE_EQ(tr.y_hat(t, 0), f.y_hat);
    EXPECT_NEAR(tr.xpx(t, 0) + tr.sigma2(t, 0), f.risk, 1e-12 * f.risk);
    s = kalman_step(model, s, x, stream.y(t));
  }
}

TEST(RunOnlineTest, NoLookahead) {
  const auto stream = static_stream(400, 3, 0.5);
  const auto bank = build_subset_bank(kCovariates, study_subsets(5, {0, 1}, 8), ExpertTemplate{1.0, 0.01, 1.0, 0.0, 10.0});
  AggregationOptions agg;
  agg.burn_in = 50;
  ExpertRunOptions ex;
  ex.window = 100;
  ex.refit = Refit::Em;
  ex.em.n_iter = 3;
  const auto base = run_online(bank, stream, all_rule_specs(), agg, ex);
  Rng rng(9);
  for (Eigen::Index cut : {10, 49, 50, 99, 100, 250}) {
    ObservationStream perturbed = stream;
    std::vector<double> tail(stream.y.data() + cut + 1, stream.y.data() + stream.y.size());
    std::reverse(tail.begin(), tail.end());
    for (std::size_t i = 0; i < tail.size(); ++i) perturbed.y(cut + 1 + static_cast<Eigen::Index>(i)) = tail[i] + 1.0;
    const auto other = run_online(bank, perturbed, all_rule_specs(), agg, ex);
    const auto len = static_cast<std::size_t>(cut + 1);
    for (std::size_t r = 0; r < base.rules.size(); ++r) {
      EXPECT_EQ(0, std::memcmp(base.rules[r].y_agg.data(), other.rules[r].y_agg.data(), len * sizeof(double)))
          << to_string(base.rules[r].spec.rule) << " cut " << cut;
    }
  }
}

TEST(RunOnlineTest, RefitNoneEqualsPlainRunAndLongWindowNeverRefits) {
  const auto stream = static_stream(200, 4);
  const auto bank = build_subset_bank(kCovariates, study_subsets(5, {0, 1}, 4), ExpertTemplate{});
  const auto plain = run_experts(bank, stream.X, stream.y);
  ExpertRunOptions none;
  none.window = 50;
  none.refit = Refit::None;
  EXPECT_EQ(run_experts(bank, stream.X, stream.y, none).y_hat, plain.y_hat);
  ExpertRunOptions wide;
  wide.window = 200;
  wide.refit = Refit::Em;
  const auto w = run_experts(bank, stream.X, stream.y, wide);
  EXPECT_EQ(w.refits, 0U);
  EXPECT_EQ(w.y_hat, plain.y_hat);
  ExpertRunOptions narrow;
  narrow.window = 2;
  narrow.refit = Refit::Em;
  EXPECT_THROW(run_experts(bank, stream.X, stream.y, narrow), std::invalid_argument);
}

TEST(RunOnlineTest, ThreadedExpertPassIsIdentical) {
  const auto stream = static_stream(300, 5);
  const auto bank = build_subset_bank(kCovariates, study_subsets(5, {0, 1}, 10), ExpertTemplate{});
  ExpertRunOptions opt;
  opt.window = 100;
  opt.refit = Refit::Em;
  opt.em.n_iter = 2;
  const auto a = run_experts(bank, stream.X, stream.y, opt);
  opt.threads = 4;
  const auto b = run_experts(bank, stream.X, stream.y, opt);
  EXPECT_EQ(a.y_hat, b.y_hat);
  EXPECT_EQ(a.xpx, b.xpx);
}

TEST(Sigma2EstimateTest, Examples) {
  Vector y = Vector::LinSpaced(10, 0.0, 9.0);
  EXPECT_EQ(estimate_sigma2(y, y, 10), kSigma2Floor);
  EXPECT_DOUBLE_EQ(estimate_sigma2(y, (y.array() - 0.5).matrix(), 7), 0.25);
  EXPECT_THROW(estimate_sigma2(y, y, 0), std::invalid_argument);
  EXPECT_THROW(estimate_sigma2(y, y, 11), std::invalid_argument);
}

TEST(Sigma2EstimateTest, StartSkipsLeadingSteps) {
  Vector y = Vector::Zero(6);
  Vector y_hat(6);
  y_hat << 100.0, 100.0, 1.0, -1.0, 1.0, -1.0;
  EXPECT_DOUBLE_EQ(estimate_sigma2(y, y_hat, 6, 2), 1.0);
  EXPECT_THROW(estimate_sigma2(y, y_hat, 3, 3), std::invalid_argument);
}

TEST(Sigma2EstimateTest, StaticSimulationWithinTenPercent) {
  const double s2 = 2.25;
  const auto stream = static_stream(2500, 6, s2);
  const auto bank = build_subset_bank(kCovariates, {{0, 1, 2}}, ExpertTemplate{1.0, 0.0, 1.0, 0.0, 100.0});
  const auto tr = run_experts(bank, stream.X, stream.y);
  EXPECT_NEAR(estimate_sigma2(stream.y, tr.y_hat.col(0), 2000), s2, 0.1 * s2);
}

TEST(ConvexOracleTest, ExactExpertIsAVertex) {
  Rng rng(7);
  const Vector y = testing::random_vector(60, rng);
  Matrix F(60, 3);
  F.col(0) = testing::random_vector(60, rng);
  F.col(1) = y;
  F.col(2) = testing::random_vector(60, rng);
  const auto r = best_convex_oracle(F, y);
  EXPECT_LE(r.mse, 1e-20);
  EXPECT_NEAR(r.pi(1), 1.0, 1e-9);
}

TEST(ConvexOracleTest, IdenticalExpertsHaveUniqueMse) {
  Rng rng(8);
  const Vector y = testing::random_vector(40, rng);
  const Vector f = testing::random_vector(40, rng);
  Matrix F(40, 2);
  F << f, f;
  const auto r = best_convex_oracle(F, y);
  EXPECT_NEAR(r.mse, mse(y, f), 1e-12);
}

TEST(ConvexOracleTest, MatchesGridSearch) {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector y = testing::random_vector(50, rng);
    const Matrix F = testing::random_matrix(50, 3, rng) + 0.5 * y.replicate(1, 3);
    const auto r = best_convex_oracle(F, y, static_cast<std::uint64_t>(trial));
    double grid = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 100; ++i) {
      for (int j = 0; i + j <= 100; ++j) {
        Vector pi(3);
        pi << i / 100.0, j / 100.0, (100 - i - j) / 100.0;
        grid = std::min(grid, mse(y, F * pi));
      }
    }
    EXPECT_LE(r.mse, grid + 1e-12);
    EXPECT_NEAR(r.mse, grid, 1e-4);
    EXPECT_LE(r.stationarity, 1e-9);
    EXPECT_TRUE(in_simplex(r.pi, 1e-12));
  }
}

TEST(MetricsTest, OrderingInvariants) {
  const auto stream = static_stream(600, 10);
  const auto bank = build_subset_bank(kCovariates, study_subsets(5, {0, 1, 2}, 6), ExpertTemplate{});
  AggregationOptions agg;
  agg.burn_in = 100;
  agg.truth = Truth{*stream.mu, 1.0};
  const auto rec = run_online(bank, stream, all_rule_specs(), agg);
  const auto rep = compute_metrics(rec);
  EXPECT_LE(rep.best_convex.mse, rep.expert_mse.minCoeff() + 1e-12);
  for (const auto& rm : rep.rules) {
    EXPECT_GE(rm.mse, rep.best_convex.mse - 1e-12) << rm.rule;
    ASSERT_TRUE(rm.regret_selection.has_value());
    // R^A(pi*) = R^S(m) + (cum risk of m - cum risk of pi*): an identity on the definitions.
    Eigen::Index best = 0;
    rep.expert_cum_risk->minCoeff(&best);
    const double pi_star_risk = exact_risk(rec.trace.y_hat.bottomRows(500) * rep.best_convex.pi,
                                           Truth{stream.mu->tail(500), 1.0})
                                    .sum();
    EXPECT_NEAR(*rm.regret_aggregation,
                (*rm.regret_selection)(best) + ((*rep.expert_cum_risk)(best) - pi_star_risk),
                1e-8 * std::abs(pi_star_risk));
    EXPECT_EQ(rm.cum_sq_error.size(), 500);
  }
}

TEST(MetricsTest, AggregateEqualToExpertHasZeroSelectionRegret) {
  const auto stream = static_stream(200, 11);
  const auto bank = build_subset_bank(kCovariates, {{0, 1, 2}}, ExpertTemplate{});
  AggregationOptions agg;
  agg.truth = Truth{*stream.mu, 1.0};
  RuleSpec s;
  s.rule = Rule::KaoAda;
  const auto rep = compute_metrics(run_online(bank, stream, {s}, agg));
  EXPECT_EQ((*rep.rules[0].regret_selection)(0), 0.0);
}

ExpertTrace slice(const ExpertTrace& tr, Eigen::Index from) {
  ExpertTrace out = tr;
  const auto n = tr.horizon() - from;
  out.y_hat = tr.y_hat.bottomRows(n);
  out.xpx = tr.xpx.bottomRows(n);
  out.sigma2 = tr.sigma2.bottomRows(n);
  return out;
}

TEST(BurnInReplayTest, MatchesRunStartedAtWarmup) {
  const auto stream = static_stream(300, 11);
  const auto bank = build_subset_bank(kCovariates, study_subsets(5, {0, 1}, 6), ExpertTemplate{1.0, 0.01, 1.0, 0.0, 10.0});
  const auto tr = run_experts(bank, stream.X, stream.y);
  const Matrix risk = tr.xpx + tr.sigma2;
  const std::size_t warmup = 40;
  const std::size_t burn_in = 90;
  const auto w = static_cast<Eigen::Index>(warmup);
  const auto b = static_cast<Eigen::Index>(burn_in);
  const auto sub = slice(tr, w);
  const Vector y_sub = stream.y.tail(300 - w);
  for (Rule r : {Rule::KaoMs, Rule::KaoGrad, Rule::KaoAda, Rule::Ewa, Rule::Boa, Rule::MlPoly}) {
    RuleSpec spec;
    spec.rule = r;
    spec.eta = 0.05;
    const RuleRun full = run_rule(tr, risk, stream.y, spec, burn_in, warmup);
    const RuleRun cut = run_rule(sub, risk.bottomRows(300 - w), y_sub, spec, 0);
    // Prior weights until the burn-in ends, then the trajectory of a run started at warmup.
    for (Eigen::Index t = 0; t < b; ++t) EXPECT_EQ(full.rho.row(t), uniform_weights(6).transpose());
    EXPECT_LE((full.rho.bottomRows(300 - b) - cut.rho.bottomRows(300 - b)).cwiseAbs().maxCoeff(), 1e-14)
        << to_string(r);
  }
}

TEST(BurnInReplayTest, RejectsWarmupNotBeforeBurnIn) {
  const auto stream = static_stream(50, 12);
  const auto bank = build_subset_bank(kCovariates, {{0}, {1}}, ExpertTemplate{});
  const auto tr = run_experts(bank, stream.X, stream.y);
  const Matrix risk = tr.xpx + tr.sigma2;
  EXPECT_THROW(run_rule(tr, risk, stream.y, RuleSpec{}, 10, 10), std::invalid_argument);
  EXPECT_THROW(run_rule(tr, risk, stream.y, RuleSpec{}, 50, 0), std::invalid_argument);
}

}  // namespace
}  // namespace kao
