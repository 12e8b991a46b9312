#include "kao/model.hpp"

#include <gtest/gtest.h>

#include <cstring>

#include "test_util.hpp"

namespace kao {
namespace {

using testing::random_model;
using testing::random_psd;
using testing::random_transition;
using testing::uniform_design;

Matrix study_q() {
  Matrix q(2, 2);
  q << 1.0, 0.9, 0.9, 1.0;
  return q;
}

TEST(StateSpaceModelTest, RejectsInvalidParameters) {
  const Matrix I = Matrix::Identity(2, 2);
  Matrix indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  Matrix asym(2, 2);
  asym << 1.0, 0.1, 0.0, 1.0;
  EXPECT_THROW(StateSpaceModel(I, indefinite, 1.0, Vector::Zero(2), I), std::invalid_argument);
  EXPECT_THROW(StateSpaceModel(I, asym, 1.0, Vector::Zero(2), I), std::invalid_argument);
  EXPECT_THROW(StateSpaceModel(I, I, 0.0, Vector::Zero(2), I), std::invalid_argument);
  EXPECT_THROW(StateSpaceModel(I, I, -1.0, Vector::Zero(2), I), std::invalid_argument);
  EXPECT_THROW(StateSpaceModel(I, I, 1.0, Vector::Zero(3), I), DimensionError);
  EXPECT_NO_THROW(StateSpaceModel(I, study_q(), 2.25, Vector::Zero(2), I));
}

TEST(SimulateTest, SameSeedIsBitIdentical) {
  Rng rng(1);
  const auto model = random_model(3, rng);
  const Design X = uniform_design(200, 3, rng);
  const auto a = simulate_ssm(model, X, 42);
  const auto b = simulate_ssm(model, X, 42);
  const auto c = simulate_ssm(model, X, 43);
  ASSERT_EQ(a.y.size(), 200);
  EXPECT_EQ(0, std::memcmp(a.y.data(), b.y.data(), sizeof(double) * 200));
  EXPECT_NE(a.y(0), c.y(0));
}

TEST(SimulateTest, DimensionMismatchRejected) {
  const auto model = StateSpaceModel::random_walk(study_q(), 2.25, 1.0);
  Rng rng(2);
  EXPECT_THROW(simulate_ssm(model, uniform_design(10, 3, rng), 1), DimensionError);
  EXPECT_THROW(simulate_ssm(model, Design(0, 2), 1), std::invalid_argument);
}

TEST(SimulateTest, ZeroStateGivesIidStandardNormals) {
  const StateSpaceModel model(Matrix::Identity(2, 2), Matrix::Zero(2, 2), 1.0, Vector::Zero(2),
                              Matrix::Identity(2, 2));
  Rng rng(3);
  const auto s = simulate_ssm(model, uniform_design(20000, 2, rng), 7);
  const double n = 20000.0;
  const double mean = s.y.mean();
  const double var = (s.y.array() - mean).square().sum() / (n - 1);
  EXPECT_LT(std::abs(mean), 5.0 / std::sqrt(n));
  EXPECT_LT(std::abs(var - 1.0), 5.0 * std::sqrt(2.0 / n));
  EXPECT_DOUBLE_EQ(s.mu->cwiseAbs().maxCoeff(), 0.0);
}

TEST(SimulateTest, NoiselessConstantSignal) {
  // sigma2 must stay positive, so "noiseless" is sigma2 = 1e-20.
  const StateSpaceModel model(Matrix::Ones(1, 1), Matrix::Zero(1, 1), 1e-20, Vector::Constant(1, 2.0),
                              Matrix::Ones(1, 1));
  const auto s = simulate_ssm(model, Design::Ones(50, 1), 11);
  EXPECT_LT((s.y.array() - 2.0).abs().maxCoeff(), 1e-9);
}

TEST(SimulateTest, ExplicitRepresentationMatchesRecursion) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 1 + trial % 4;
    const StateSpaceModel model(random_transition(d, rng, 0.98), random_psd(d, rng), 1.0,
                                testing::random_vector(d, rng), random_psd(d, rng));
    const auto s = simulate_ssm(model, uniform_design(200, d, rng), 100 + trial);
    for (std::size_t t : {1UL, 2UL, 17UL, 100UL, 200UL}) {
      const Vector closed = explicit_state(model, *s.state_noise, t);
      EXPECT_LE(((*s.theta_path)[t - 1] - closed).cwiseAbs().maxCoeff(), 1e-9) << "d=" << d << " t=" << t;
    }
  }
}

TEST(SimulateTest, SignalIsDesignTimesState) {
  Rng rng(5);
  const auto model = random_model(2, rng);
  const auto s = simulate_ssm(model, uniform_design(30, 2, rng), 9);
  for (Eigen::Index t = 0; t < 30; ++t) {
    EXPECT_DOUBLE_EQ((*s.mu)(t), s.X.row(t).dot((*s.theta_path)[static_cast<std::size_t>(t)]));
  }
}

TEST(MeanVarianceTest, RandomWalkVarianceIsTPlusOne) {
  // d=1, K=1, Q=1, sigma2=1, x=1: var(y_t) = t + 1.
  const StateSpaceModel model(Matrix::Ones(1, 1), Matrix::Ones(1, 1), 1.0, Vector::Zero(1), Matrix::Ones(1, 1));
  const Design X = Design::Ones(8, 1);
  for (std::size_t t : {1UL, 4UL, 8UL}) {
    const auto g = check_mean_variance_identity(model, X, t, 100000, 21 + t);
    EXPECT_DOUBLE_EQ(g.analytic_var, static_cast<double>(t) + 1.0);
    EXPECT_LT(g.mean_gap, 5.0 * g.mean_se);
    EXPECT_LT(g.var_gap, 5.0 * g.var_se);
  }
}

TEST(MeanVarianceTest, StaticModelVarianceIsSigma2) {
  const StateSpaceModel model(Matrix::Identity(2, 2), Matrix::Zero(2, 2), 2.5, Vector::Constant(2, 3.0),
                              Matrix::Identity(2, 2));
  Rng rng(6);
  const Design X = uniform_design(5, 2, rng);
  const auto g = check_mean_variance_identity(model, X, 5, 100000, 5);
  EXPECT_DOUBLE_EQ(g.analytic_var, 2.5);
  EXPECT_NEAR(g.analytic_mean, X.row(4).sum() * 3.0, 1e-12);
  EXPECT_LT(g.var_gap, 5.0 * g.var_se);
  EXPECT_LT(g.mean_gap, 5.0 * g.mean_se);
}

TEST(MeanVarianceTest, ZeroTransitionKeepsOnlyCurrentNoise) {
  Rng rng(7);
  const Matrix q = random_psd(2, rng);
  const StateSpaceModel model(Matrix::Zero(2, 2), q, 0.7, Vector::Constant(2, 5.0), Matrix::Identity(2, 2));
  const Design X = uniform_design(6, 2, rng);
  const Vector x = X.row(5).transpose();
  const auto g = check_mean_variance_identity(model, X, 6, 100000, 8);
  EXPECT_NEAR(g.analytic_var, x.dot(q * x) + 0.7, 1e-12);
  EXPECT_NEAR(g.analytic_mean, 0.0, 1e-12);
  EXPECT_LT(g.var_gap, 5.0 * g.var_se);
}

TEST(MeanVarianceTest, CorrelatedRandomWalk) {
  const StateSpaceModel model(Matrix::Identity(2, 2), study_q(), 2.25, Vector::Constant(2, 500.0),
                              Matrix::Identity(2, 2));
  Rng rng(8);
  const Design X = uniform_design(10, 2, rng);
  const auto g = check_mean_variance_identity(model, X, 10, 100000, 9);
  EXPECT_LT(g.mean_gap, 5.0 * g.mean_se);
  EXPECT_LT(g.var_gap, 5.0 * g.var_se);
}

TEST(MeanVarianceTest, Preconditions) {
  const auto model = StateSpaceModel::random_walk(Matrix::Ones(1, 1), 1.0, 1.0);
  EXPECT_THROW(check_mean_variance_identity(model, Design::Ones(3, 1), 4, 1000, 1), std::invalid_argument);
  EXPECT_THROW(check_mean_variance_identity(model, Design::Ones(3, 1), 2, 999, 1), std::invalid_argument);
}

TEST(RngTest, SubstreamsAreIndependentOfOrder) {
  Rng a = Rng::substream(99, stream_id::observation_noise);
  Rng b = Rng::substream(99, stream_id::state_noise);
  const double a0 = a.normal();
  Rng a2 = Rng::substream(99, stream_id::observation_noise);
  EXPECT_EQ(a0, a2.normal());
  EXPECT_NE(a0, b.normal());
  Rng u(5);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

}  // namespace
}  // namespace kao
