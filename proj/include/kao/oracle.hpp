#pragma once

// Brute-force reference computations for testing the recursive estimators.
// Nothing here depends on kalman.hpp or smoother.hpp.

#include <vector>

#include "kao/model.hpp"
#include "kao/types.hpp"

namespace kao::oracle {

inline constexpr Eigen::Index kMaxHorizon = 50;
inline constexpr Eigen::Index kMaxDim = 4;

/// argmin_theta sum_s (y_s - X_s' theta)^2 + lambda ||theta - theta_start||^2
/// via the d x d normal equations.
inline Vector ridge_oracle(double lambda, const Vector& theta_start, const Design& X, const Vector& y) {
  require(lambda > 0.0, "ridge_oracle: lambda must be > 0");
  require_dim(X.cols(), theta_start.size(), "ridge_oracle X columns");
  require_dim(X.rows(), y.size(), "ridge_oracle rows");
  const auto d = theta_start.size();
  const Matrix a = lambda * Matrix::Identity(d, d) + X.transpose() * X;
  const Vector b = lambda * theta_start + X.transpose() * y;
  return a.ldlt().solve(b);
}

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

namespace detail {

/// Joint Gaussian of (theta_1..theta_T, y_1..y_T) as an affine map of the
/// independent primitives (theta_0, z_1..z_T, eps_1..eps_T).
struct JointGaussian {
  Eigen::Index T = 0;
  Eigen::Index d = 0;
  Vector mean;  // [theta block (T*d); y block (T)]
  Matrix cov;

  [[nodiscard]] Eigen::Index theta_index(Eigen::Index t) const { return t * d; }
  [[nodiscard]] Eigen::Index y_index(Eigen::Index t) const { return T * d + t; }
};

inline JointGaussian build_joint(const StateSpaceModel& model, const Design& X) {
  const auto T = X.rows();
  const auto d = model.dim();
  if (T > kMaxHorizon || d > kMaxDim) throw std::invalid_argument("exact oracle: beyond test-scale cap (T<=50, d<=4)");
  require_dim(X.cols(), d, "exact oracle design columns");

  const Eigen::Index n_prim = d + T * d + T;
  const Eigen::Index n_out = T * d + T;
  Matrix a = Matrix::Zero(n_out, n_prim);
  Matrix prim_cov = Matrix::Zero(n_prim, n_prim);
  prim_cov.topLeftCorner(d, d) = model.P0();
  for (Eigen::Index k = 0; k < T; ++k) prim_cov.block(d + k * d, d + k * d, d, d) = model.Q();
  for (Eigen::Index k = 0; k < T; ++k) prim_cov(d + T * d + k, d + T * d + k) = model.sigma2();

  JointGaussian j;
  j.T = T;
  j.d = d;
  j.mean = Vector::Zero(n_out);

  // theta_t = K^t theta_0 + sum_{k=1..t} K^{t-k} z_k (t 1-based; row block t-1).
  for (Eigen::Index t = 1; t <= T; ++t) {
    const Eigen::Index row = (t - 1) * d;
    const Matrix kt = matrix_power(model.K(), static_cast<std::size_t>(t));
    a.block(row, 0, d, d) = kt;
    j.mean.segment(row, d) = kt * model.theta0();
    for (Eigen::Index k = 1; k <= t; ++k) {
      a.block(row, d + (k - 1) * d, d, d) = matrix_power(model.K(), static_cast<std::size_t>(t - k));
    }
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector x = X.row(t).transpose();
    a.row(T * d + t) = x.transpose() * a.block(t * d, 0, d, n_prim);
    a(T * d + t, d + T * d + t) = 1.0;
    j.mean(T * d + t) = x.dot(j.mean.segment(t * d, d));
  }
  j.cov = a * prim_cov * a.transpose();
  return j;
}

/// Moments of theta_t (0-based t) given y_0..y_{n_obs-1}.
inline GaussianMoments condition(const JointGaussian& j, const Vector& y, Eigen::Index t, Eigen::Index n_obs) {
  const auto d = j.d;
  const auto ti = j.theta_index(t);
  GaussianMoments m;
  m.mean = j.mean.segment(ti, d);
  m.cov = j.cov.block(ti, ti, d, d);
  if (n_obs == 0) return m;
  const auto yi = j.y_index(0);
  const Matrix c_yy = j.cov.block(yi, yi, n_obs, n_obs);
  const Matrix c_ty = j.cov.block(ti, yi, d, n_obs);
  const Vector resid = y.head(n_obs) - j.mean.segment(yi, n_obs);
  const auto solver = c_yy.ldlt();
  m.mean += c_ty * solver.solve(resid);
  m.cov -= c_ty * solver.solve(c_ty.transpose());
  m.cov = symmetrized(m.cov);
  return m;
}

}  // namespace detail

/// E[theta_t | y_1..y_{t-1}] and its covariance for t = 1..T, by dense
/// conditioning of the joint Gaussian (theta_0 ~ N(theta0, P0)).
inline std::vector<GaussianMoments> exact_filter_oracle(const StateSpaceModel& model, const Design& X, const Vector& y) {
  require_dim(X.rows(), y.size(), "exact_filter_oracle rows");
  const auto j = detail::build_joint(model, X);
  std::vector<GaussianMoments> out;
  for (Eigen::Index t = 0; t < j.T; ++t) out.push_back(detail::condition(j, y, t, t));
  return out;
}

/// E[theta_t | y_1..y_T] and its covariance for t = 1..T.
inline std::vector<GaussianMoments> exact_smoother_oracle(const StateSpaceModel& model, const Design& X,
                                                          const Vector& y) {
  require_dim(X.rows(), y.size(), "exact_smoother_oracle rows");
  const auto j = detail::build_joint(model, X);
  std::vector<GaussianMoments> out;
  for (Eigen::Index t = 0; t < j.T; ++t) out.push_back(detail::condition(j, y, t, j.T));
  return out;
}

}  // namespace kao::oracle
