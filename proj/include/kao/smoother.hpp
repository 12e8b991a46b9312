#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "kao/model.hpp"
#include "kao/types.hpp"

namespace kao {

/// Output of the fixed-interval (Rauch-Tung-Striebel) smoother.
struct SmoothedPath {
  /// E[theta_t | y_1..y_T], t = 1..T.
  std::vector<Vector> theta_smooth;
  std::vector<Matrix> V_smooth;
  /// Cov(theta_t, theta_{t-1} | y_1..y_T), t = 1..T (t = 1 pairs with theta_0).
  std::vector<Matrix> V_lag;
  Vector theta0_smooth;
  Matrix V0_smooth;
  /// Exact Gaussian log-likelihood of y_1..y_T.
  double loglik = 0.0;
};

namespace detail {

struct FilterPass {
  std::vector<Vector> a_pred;
  std::vector<Matrix> P_pred;
  std::vector<Vector> a_filt;
  std::vector<Matrix> P_filt;
  double loglik = 0.0;
};

// Standard filter with observation variance sigma2 (not the unit-normalised
// recursion of kalman_step): the smoother and EM need the exact posterior.
inline FilterPass forward_pass(const StateSpaceModel& m, const Design& X, const Vector& y, bool keep) {
  require_dim(X.rows(), y.size(), "forward_pass rows");
  require_dim(X.cols(), m.dim(), "forward_pass design columns");
  require(X.allFinite() && y.allFinite(), "forward_pass: non-finite input");
  const auto T = y.size();
  FilterPass f;
  if (keep) {
    f.a_pred.reserve(static_cast<std::size_t>(T));
    f.P_pred.reserve(static_cast<std::size_t>(T));
    f.a_filt.reserve(static_cast<std::size_t>(T));
    f.P_filt.reserve(static_cast<std::size_t>(T));
  }
  Vector a = m.K() * m.theta0();
  Matrix P = symmetrized(m.K() * m.P0() * m.K().transpose() + m.Q());
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector x = X.row(t).transpose();
    const Vector px = P * x;
    const double F = x.dot(px) + m.sigma2();
    if (!(F > 0.0)) {
      throw NumericalError("rts_smooth: non-positive innovation variance at t=" + std::to_string(t + 1) +
                           " (covariance lost positive semidefiniteness)");
    }
    const double v = y(t) - x.dot(a);
    f.loglik += -0.5 * (log2pi + std::log(F) + v * v / F);
    const Vector af = a + (v / F) * px;
    const Matrix Pf = symmetrized(P - (px * px.transpose()) / F);
    if (keep) {
      f.a_pred.push_back(a);
      f.P_pred.push_back(P);
      f.a_filt.push_back(af);
      f.P_filt.push_back(Pf);
    }
    a = m.K() * af;
    P = symmetrized(m.K() * Pf * m.K().transpose() + m.Q());
  }
  return f;
}

// J = Pf K' Ppred^+ computed as a least-squares solve.
inline Matrix smoother_gain(const Matrix& p_filt, const Matrix& k, const Matrix& p_pred_next) {
  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(p_pred_next);
  return cod.solve(k * p_filt.transpose()).transpose();
}

}  // namespace detail

/// Gaussian log-likelihood of y under the model (forward pass only).
inline double log_likelihood(const StateSpaceModel& model, const Design& X, const Vector& y) {
  return detail::forward_pass(model, X, y, false).loglik;
}

inline SmoothedPath rts_smooth(const StateSpaceModel& model, const Design& X, const Vector& y) {
  require(y.size() > 0, "rts_smooth: empty stream");
  const auto f = detail::forward_pass(model, X, y, true);
  const auto T = static_cast<std::size_t>(y.size());

  SmoothedPath s;
  s.loglik = f.loglik;
  s.theta_smooth.resize(T);
  s.V_smooth.resize(T);
  s.V_lag.resize(T);
  s.theta_smooth[T - 1] = f.a_filt[T - 1];
  s.V_smooth[T - 1] = f.P_filt[T - 1];
  for (std::size_t i = T - 1; i-- > 0;) {
    const Matrix J = detail::smoother_gain(f.P_filt[i], model.K(), f.P_pred[i + 1]);
    s.theta_smooth[i] = f.a_filt[i] + J * (s.theta_smooth[i + 1] - f.a_pred[i + 1]);
    s.V_smooth[i] = symmetrized(f.P_filt[i] + J * (s.V_smooth[i + 1] - f.P_pred[i + 1]) * J.transpose());
    s.V_lag[i + 1] = s.V_smooth[i + 1] * J.transpose();
  }
  const Matrix J0 = detail::smoother_gain(model.P0(), model.K(), f.P_pred[0]);
  s.theta0_smooth = model.theta0() + J0 * (s.theta_smooth[0] - f.a_pred[0]);
  s.V0_smooth = symmetrized(model.P0() + J0 * (s.V_smooth[0] - f.P_pred[0]) * J0.transpose());
  s.V_lag[0] = s.V_smooth[0] * J0.transpose();
  return s;
}

struct EmOptions {
  std::size_t n_iter = 50;
  double tol = 1e-8;
  /// K is never estimated; the flag documents the caller's intent and must be true.
  bool fixed_K = true;
  bool estimate_theta0 = false;
};

struct EmResult {
  StateSpaceModel model;
  /// loglik[k] is the log-likelihood of the parameters after k M-steps.
  std::vector<double> loglik;
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

inline Matrix clamp_psd(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(a));
  const Vector ev = es.eigenvalues().cwiseMax(0.0);
  return symmetrized(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

}  // namespace detail

/// EM for (Q, sigma2[, theta0]) with K held fixed. E-step: rts_smooth;
/// M-step: closed-form second-moment updates.
inline EmResult em_fit(const Design& X, const Vector& y, const StateSpaceModel& init, const EmOptions& opt) {
  require(opt.n_iter >= 1, "em_fit: n_iter must be >= 1");
  require(opt.fixed_K, "em_fit: estimating K is not supported");
  const auto T = static_cast<std::size_t>(y.size());
  require(T >= 1, "em_fit: empty stream");
  const double Tn = static_cast<double>(T);
  const auto d = init.dim();

  EmResult r{init, {}, 0, false};
  for (std::size_t it = 0; it < opt.n_iter; ++it) {
    const SmoothedPath s = rts_smooth(r.model, X, y);
    if (!std::isfinite(s.loglik)) {
      throw NumericalError("em_fit: non-finite log-likelihood at iteration " + std::to_string(it + 1));
    }
    r.loglik.push_back(s.loglik);
    if (it > 0 && r.loglik[it] - r.loglik[it - 1] < opt.tol) {
      r.converged = true;
      return r;
    }

    const Matrix& K = r.model.K();
    Matrix s11 = Matrix::Zero(d, d);
    Matrix s10 = Matrix::Zero(d, d);
    Matrix s00 = Matrix::Zero(d, d);
    double resid = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const Vector& th = s.theta_smooth[t];
      const Vector& prev = t == 0 ? s.theta0_smooth : s.theta_smooth[t - 1];
      const Matrix& vprev = t == 0 ? s.V0_smooth : s.V_smooth[t - 1];
      s11 += s.V_smooth[t] + th * th.transpose();
      s10 += s.V_lag[t] + th * prev.transpose();
      s00 += vprev + prev * prev.transpose();
      const Vector x = X.row(static_cast<Eigen::Index>(t)).transpose();
      const double e = y(static_cast<Eigen::Index>(t)) - x.dot(th);
      resid += e * e + x.dot(s.V_smooth[t] * x);
    }
    const Matrix q = detail::clamp_psd((s11 - s10 * K.transpose() - K * s10.transpose() + K * s00 * K.transpose()) / Tn);
    const double sigma2 = resid / Tn;
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
      throw NumericalError("em_fit: degenerate sigma2 at iteration " + std::to_string(it + 1));
    }
    r.model = opt.estimate_theta0 ? StateSpaceModel(K, q, sigma2, s.theta0_smooth, r.model.P0())
                                  : r.model.with_noise(q, sigma2);
    r.iterations = it + 1;
  }
  const double final_ll = log_likelihood(r.model, X, y);
  if (!std::isfinite(final_ll)) {
    throw NumericalError("em_fit: non-finite log-likelihood at iteration " + std::to_string(opt.n_iter + 1));
  }
  r.loglik.push_back(final_ll);
  r.converged = r.loglik.size() >= 2 && r.loglik.back() - r.loglik[r.loglik.size() - 2] < opt.tol;
  return r;
}

}  // namespace kao
