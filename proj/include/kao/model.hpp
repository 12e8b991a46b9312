#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "kao/rng.hpp"
#include "kao/types.hpp"

namespace kao {

inline constexpr double kModelPsdTol = 1e-10;

/// Parameters of one linear-Gaussian state-space model
///
///   theta_t = K theta_{t-1} + z_t,   z_t ~ N(0, Q)
///   y_t     = X_t' theta_t + eps_t,  eps_t ~ N(0, sigma2)
///
/// theta0 is the deterministic state at time 0; P0 is the covariance the
/// filter attaches to it. Construction validates; instances are immutable.
class StateSpaceModel {
 public:
  StateSpaceModel(Matrix k, Matrix q, double sigma2, Vector theta0, Matrix p0)
      : k_(std::move(k)), q_(std::move(q)), sigma2_(sigma2), theta0_(std::move(theta0)), p0_(std::move(p0)) {
    const auto d = theta0_.size();
    require(d > 0, "StateSpaceModel: dimension must be positive");
    require_dim(k_.rows(), d, "StateSpaceModel K rows");
    require_dim(k_.cols(), d, "StateSpaceModel K cols");
    require_dim(q_.rows(), d, "StateSpaceModel Q rows");
    require_dim(q_.cols(), d, "StateSpaceModel Q cols");
    require_dim(p0_.rows(), d, "StateSpaceModel P0 rows");
    require_dim(p0_.cols(), d, "StateSpaceModel P0 cols");
    require(k_.allFinite() && q_.allFinite() && theta0_.allFinite() && p0_.allFinite(),
            "StateSpaceModel: non-finite parameter");
    require(std::isfinite(sigma2_) && sigma2_ > 0.0, "StateSpaceModel: sigma2 must be > 0");
    require(is_psd(q_, kModelPsdTol), "StateSpaceModel: Q must be symmetric PSD");
    require(is_psd(p0_, kModelPsdTol), "StateSpaceModel: P0 must be symmetric PSD");
  }

  /// Random walk (K = I) with the given Q, sigma2 and P0 = p0_scale * I, theta0 = 0.
  static StateSpaceModel random_walk(const Matrix& q, double sigma2, double p0_scale) {
    const auto d = q.rows();
    return {Matrix::Identity(d, d), q, sigma2, Vector::Zero(d), p0_scale * Matrix::Identity(d, d)};
  }

  /// Static model (K = I, Q = 0): the recursion reduces to online ridge with
  /// penalty lambda around theta0.
  static StateSpaceModel static_ridge(Eigen::Index d, double lambda, double sigma2, Vector theta0) {
    require(lambda > 0.0, "static_ridge: lambda must be > 0");
    return {Matrix::Identity(d, d), Matrix::Zero(d, d), sigma2, std::move(theta0),
            Matrix::Identity(d, d) / lambda};
  }

  [[nodiscard]] Eigen::Index dim() const { return theta0_.size(); }
  [[nodiscard]] const Matrix& K() const { return k_; }
  [[nodiscard]] const Matrix& Q() const { return q_; }
  [[nodiscard]] double sigma2() const { return sigma2_; }
  [[nodiscard]] const Vector& theta0() const { return theta0_; }
  [[nodiscard]] const Matrix& P0() const { return p0_; }

  [[nodiscard]] StateSpaceModel with_noise(Matrix q, double sigma2) const {
    return {k_, std::move(q), sigma2, theta0_, p0_};
  }
  [[nodiscard]] StateSpaceModel with_theta0(Vector theta0) const { return {k_, q_, sigma2_, std::move(theta0), p0_}; }

 private:
  Matrix k_;
  Matrix q_;
  double sigma2_;
  Vector theta0_;
  Matrix p0_;
};

/// Observed (X_t, y_t) pairs, plus the latent path when simulated.
struct ObservationStream {
  Design X;
  Vector y;
  /// theta_1..theta_T (simulation only).
  std::optional<std::vector<Vector>> theta_path;
  /// Noise-free signal X_t' theta_t (simulation only).
  std::optional<Vector> mu;
  /// z_1..z_T as drawn (simulation only).
  std::optional<std::vector<Vector>> state_noise;

  [[nodiscard]] std::size_t horizon() const { return static_cast<std::size_t>(y.size()); }
  [[nodiscard]] Eigen::Index dim() const { return X.cols(); }

  void validate() const {
    require(y.size() > 0, "ObservationStream: empty");
    require_dim(X.rows(), y.size(), "ObservationStream rows of X");
    if (mu) require_dim(mu->size(), y.size(), "ObservationStream mu");
    if (theta_path) require_dim(static_cast<Eigen::Index>(theta_path->size()), y.size(), "ObservationStream theta");
  }
};

/// Draws a stream from `model` on the given design. Sub-streams: state noise
/// uses stream_id::state_noise, observation noise stream_id::observation_noise.
inline ObservationStream simulate_ssm(const StateSpaceModel& model, const Design& X, std::uint64_t seed) {
  require(X.rows() > 0, "simulate_ssm: empty design");
  require_dim(X.cols(), model.dim(), "simulate_ssm design columns");
  require(X.allFinite(), "simulate_ssm: non-finite design");

  const auto T = X.rows();
  const auto d = model.dim();
  Rng state_rng = Rng::substream(seed, stream_id::state_noise);
  Rng obs_rng = Rng::substream(seed, stream_id::observation_noise);
  const Matrix q_sqrt = psd_sqrt(model.Q(), kModelPsdTol);
  const double sigma = std::sqrt(model.sigma2());

  ObservationStream out;
  out.X = X;
  out.y.resize(T);
  out.mu = Vector(T);
  out.theta_path = std::vector<Vector>();
  out.state_noise = std::vector<Vector>();
  out.theta_path->reserve(static_cast<std::size_t>(T));
  out.state_noise->reserve(static_cast<std::size_t>(T));

  Vector theta = model.theta0();
  Vector z(d);
  Vector std_normal(d);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index i = 0; i < d; ++i) std_normal(i) = state_rng.normal();
    z.noalias() = q_sqrt * std_normal;
    theta = model.K() * theta + z;
    const double signal = X.row(t).dot(theta);
    (*out.mu)(t) = signal;
    out.y(t) = signal + sigma * obs_rng.normal();
    out.theta_path->push_back(theta);
    out.state_noise->push_back(z);
  }
  return out;
}

/// theta_t from the explicit representation K^t theta0 + sum_k K^k z_{t-k}
/// (t is 1-based; noise[0] is z_1).
inline Vector explicit_state(const StateSpaceModel& model, const std::vector<Vector>& noise, std::size_t t) {
  require(t >= 1 && t <= noise.size(), "explicit_state: t out of range");
  Vector theta = matrix_power(model.K(), t) * model.theta0();
  Matrix kk = Matrix::Identity(model.dim(), model.dim());
  for (std::size_t k = 0; k < t; ++k) {
    theta += kk * noise[t - 1 - k];
    kk = kk * model.K();
  }
  return theta;
}

/// Analytic mean and variance of y_t under the model for a fixed design row:
/// mean = x' K^t theta0, var = x' (sum_{k<t} K^k Q K^k') x + sigma2.
inline std::pair<double, double> analytic_moments(const StateSpaceModel& model, const Vector& x, std::size_t t) {
  require_dim(x.size(), model.dim(), "analytic_moments x");
  Matrix sigma_t = Matrix::Zero(model.dim(), model.dim());
  Matrix kk = Matrix::Identity(model.dim(), model.dim());
  for (std::size_t k = 0; k < t; ++k) {
    sigma_t += kk * model.Q() * kk.transpose();
    kk = kk * model.K();
  }
  const double mean = x.dot(matrix_power(model.K(), t) * model.theta0());
  return {mean, x.dot(sigma_t * x) + model.sigma2()};
}

struct MomentGaps {
  double mean_gap = 0.0;
  double var_gap = 0.0;
  /// Monte-Carlo standard errors of the empirical mean and variance.
  double mean_se = 0.0;
  double var_se = 0.0;
  double analytic_mean = 0.0;
  double analytic_var = 0.0;
};

/// Monte-Carlo check of the mean-variance identity at time t (1-based).
inline MomentGaps check_mean_variance_identity(const StateSpaceModel& model, const Design& X, std::size_t t,
                                               std::size_t n_mc, std::uint64_t seed) {
  require(t >= 1 && t <= static_cast<std::size_t>(X.rows()), "check_mean_variance_identity: t out of range");
  require(n_mc >= 1000, "check_mean_variance_identity: n_mc must be >= 1000");
  require_dim(X.cols(), model.dim(), "check_mean_variance_identity design columns");

  const auto d = model.dim();
  const Matrix q_sqrt = psd_sqrt(model.Q(), kModelPsdTol);
  const double sigma = std::sqrt(model.sigma2());
  const Vector x_t = X.row(static_cast<Eigen::Index>(t - 1)).transpose();
  Rng rng(seed);

  // Two-pass moments; the fourth central moment feeds the variance SE.
  std::vector<double> samples(n_mc);
  Vector theta(d);
  Vector e(d);
  for (std::size_t r = 0; r < n_mc; ++r) {
    theta = model.theta0();
    for (std::size_t s = 0; s < t; ++s) {
      for (Eigen::Index i = 0; i < d; ++i) e(i) = rng.normal();
      theta = model.K() * theta + q_sqrt * e;
    }
    samples[r] = x_t.dot(theta) + sigma * rng.normal();
  }
  const double n = static_cast<double>(n_mc);
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;
  double m2 = 0.0;
  double m4 = 0.0;
  for (double v : samples) {
    const double c = v - mean;
    m2 += c * c;
    m4 += c * c * c * c;
  }
  const double var = m2 / (n - 1.0);
  m4 /= n;

  const auto [a_mean, a_var] = analytic_moments(model, x_t, t);
  MomentGaps gaps;
  gaps.analytic_mean = a_mean;
  gaps.analytic_var = a_var;
  gaps.mean_gap = std::abs(mean - a_mean);
  gaps.var_gap = std::abs(var - a_var);
  gaps.mean_se = std::sqrt(var / n);
  gaps.var_se = std::sqrt(std::max(m4 - var * var, 0.0) / n);
  return gaps;
}

}  // namespace kao
