#pragma once

#include <cmath>
#include <cstddef>

#include "kao/model.hpp"
#include "kao/types.hpp"

namespace kao {

inline constexpr double kFilterPsdTol = 1e-9;

/// Running filter state for one expert.
///
/// (theta_hat, P) is the one-step-ahead prediction of theta_t and its error
/// covariance, i.e. the state used to forecast y_t. `t` is the (1-based)
/// index of the next observation; last_pred / last_risk describe the most
/// recent forecast scored by kalman_step.
struct KalmanState {
  Vector theta_hat;
  Matrix P;
  std::size_t t = 1;
  double last_pred = 0.0;
  double last_risk = 0.0;

  [[nodiscard]] Eigen::Index dim() const { return theta_hat.size(); }
};

struct Forecast {
  double y_hat = 0.0;
  /// Predictive risk x' P x + sigma2.
  double risk = 0.0;
};

/// State before the first observation: theta_hat_1 = K theta0, P_1 = K P0 K' + Q.
inline KalmanState kalman_init(const StateSpaceModel& model) {
  KalmanState s;
  s.theta_hat = model.K() * model.theta0();
  s.P = symmetrized(model.K() * model.P0() * model.K().transpose() + model.Q());
  s.t = 1;
  return s;
}

inline Forecast kalman_predict(const KalmanState& state, const Vector& x_next, double sigma2) {
  require_dim(x_next.size(), state.dim(), "kalman_predict x");
  return {x_next.dot(state.theta_hat), x_next.dot(state.P * x_next) + sigma2};
}

inline Forecast kalman_predict(const StateSpaceModel& model, const KalmanState& state, const Vector& x_next) {
  return kalman_predict(state, x_next, model.sigma2());
}

/// One step of the recursion
///
///   g          = 1 / (x' P x + 1)
///   theta_hat' = K (theta_hat + g P x (y - x' theta_hat))
///   P'         = K (P - g P x x' P') K' + Q
///
/// The innovation is normalised by x'Px + 1, so sigma2 enters only the
/// reported risk. When sigma2 != 1 the recursion is the exact Gaussian filter
/// of the model whose Q and P0 are expressed in units of sigma2.
inline KalmanState kalman_step(const StateSpaceModel& model, const KalmanState& state, const Vector& x_t, double y_t) {
  require_dim(x_t.size(), model.dim(), "kalman_step x");
  require_dim(state.dim(), model.dim(), "kalman_step state");
  if (!std::isfinite(y_t) || !x_t.allFinite()) throw std::invalid_argument("kalman_step: non-finite input");

  const Vector px = state.P * x_t;
  const double xpx = x_t.dot(px);
  const double g = 1.0 / (xpx + 1.0);
  const double y_hat = x_t.dot(state.theta_hat);

  KalmanState next;
  next.theta_hat = model.K() * (state.theta_hat + (g * (y_t - y_hat)) * px);
  next.P = model.K() * (state.P - g * px * px.transpose()) * model.K().transpose() + model.Q();
  next.P = symmetrized(next.P);
  next.t = state.t + 1;
  next.last_pred = y_hat;
  next.last_risk = xpx + model.sigma2();
  return next;
}

/// Runs the recursion over a whole stream; returns per-step forecasts.
inline std::vector<Forecast> kalman_filter(const StateSpaceModel& model, const Design& X, const Vector& y) {
  require_dim(X.rows(), y.size(), "kalman_filter rows");
  std::vector<Forecast> out;
  out.reserve(static_cast<std::size_t>(y.size()));
  KalmanState s = kalman_init(model);
  for (Eigen::Index t = 0; t < y.size(); ++t) {
    const Vector x = X.row(t).transpose();
    out.push_back(kalman_predict(model, s, x));
    s = kalman_step(model, s, x, y(t));
  }
  return out;
}

}  // namespace kao
