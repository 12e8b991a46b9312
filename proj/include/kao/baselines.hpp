#pragma once

// Loss-based aggregation rules used as comparison points. They see only the
// observed y_t, never the experts' predictive risks.
//
//   EWA     exponentially weighted average, fixed rate:
//           rho ∝ rho~_0 exp(-eta * sum_s l_s).
//           Vovk (1990); Cesa-Bianchi & Lugosi, Prediction, Learning, and Games (2006).
//   BOA     Bernstein Online Aggregation with multiple adaptive rates
//           (Wintenberger 2017, "Optimal learning with Bernstein online aggregation"):
//           l~ = l_expert - l_agg,  E_t = max_{s<=t} |l~_s|,  V = sum_s l~_s^2,
//           eta_t = min(1/(2E_t), sqrt(-log rho~_0 / (1 + V))),
//           rho ∝ eta_t exp(-eta_t sum_s l~_s (1 + min(eta_{s-1}, 1/(2E_s)) l~_s)) rho~_0.
//   MLPOLY  polynomially weighted average with multiple rates
//           (Gaillard, Stoltz & van Erven 2014, "A second-order bound with excess losses"):
//           r = l_agg - l_expert,  R = sum_s r_s,  eta = 1 / (1 + sum_s r_s^2),
//           rho ∝ eta (R)_+, falling back to rho~_0 when every (R)_+ is 0.
//
// With the gradient trick the expert loss is the linearised square loss
// 2 (y_agg - y) y_hat^(m) and the aggregate's loss is sum_m rho^(m) l^(m);
// without it the losses are the observed squared errors.

#include <cmath>

#include "kao/aggregation.hpp"

namespace kao {

struct ObservedLosses {
  Vector expert;
  double aggregate = 0.0;
};

inline ObservedLosses observed_losses(double y, const Vector& y_hat, const Vector& rho, bool gradient_trick) {
  require_dim(rho.size(), y_hat.size(), "observed_losses");
  const double y_agg = rho.dot(y_hat);
  ObservedLosses out;
  if (gradient_trick) {
    out.expert = (2.0 * (y_agg - y)) * y_hat;
    out.aggregate = rho.dot(out.expert);
  } else {
    out.expert = (y_hat.array() - y).square().matrix();
    out.aggregate = (y_agg - y) * (y_agg - y);
  }
  return out;
}

inline WeightState ewa_update(const WeightState& state, const Vector& expert_losses, double eta) {
  detail::require_rule(state, Rule::Ewa, "ewa_update");
  require(eta > 0.0, "ewa_update: eta must be > 0");
  detail::require_feedback(state, expert_losses, "ewa_update");
  WeightState s = state;
  s.eta.setConstant(eta);
  s.cum_pseudo += expert_losses;
  s.log_rho -= eta * expert_losses;
  detail::shift_log_weights(s);
  s.rho = normalized_exp(s.log_rho);
  ++s.steps;
  return s;
}

inline WeightState boa_init(const Vector& rho_tilde0) {
  WeightState s = make_weight_state(Rule::Boa, rho_tilde0);
  if (s.size() > 1) {
    require((rho_tilde0.array() > 0.0).all() && (rho_tilde0.array() < 1.0).all(),
            "boa_init: every prior weight must lie in (0, 1)");
  }
  s.eta = detail::adaptive_rates(rho_tilde0, s.cum_pseudo_sq);
  s.rho = detail::second_order_weights(s.eta, s.cum_surrogate, rho_tilde0);
  return s;
}

/// `excess` is l_expert - l_agg per expert.
inline WeightState boa_update(const WeightState& state, const Vector& excess) {
  detail::require_rule(state, Rule::Boa, "boa_update");
  detail::require_feedback(state, excess, "boa_update");
  WeightState s = state;
  // The range bound includes the current loss, so the rate in the
  // second-order term always satisfies eta |l~| <= 1/2.
  s.max_abs = s.max_abs.cwiseMax(excess.cwiseAbs());
  Vector el(s.size());
  for (Eigen::Index m = 0; m < s.size(); ++m) {
    const double eta = s.max_abs(m) > 0.0 ? std::min(s.eta(m), 1.0 / (2.0 * s.max_abs(m))) : s.eta(m);
    el(m) = eta * excess(m);
  }
  if ((el.array().abs() > 0.5 + 1e-12).any()) ++s.rate_violations;
  s.cum_surrogate += excess.cwiseProduct((1.0 + el.array()).matrix());
  s.cum_pseudo += excess;
  s.cum_pseudo_sq += excess.array().square().matrix();
  s.eta = detail::adaptive_rates(s.rho_tilde0, s.cum_pseudo_sq);
  for (Eigen::Index m = 0; m < s.size(); ++m) {
    if (s.max_abs(m) > 0.0) s.eta(m) = std::min(s.eta(m), 1.0 / (2.0 * s.max_abs(m)));
  }
  s.rho = detail::second_order_weights(s.eta, s.cum_surrogate, s.rho_tilde0);
  ++s.steps;
  return s;
}

/// `regret` is l_agg - l_expert per expert. cum_pseudo holds the cumulative regret R.
inline WeightState mlpoly_update(const WeightState& state, const Vector& regret) {
  detail::require_rule(state, Rule::MlPoly, "mlpoly_update");
  detail::require_feedback(state, regret, "mlpoly_update");
  WeightState s = state;
  s.cum_pseudo += regret;
  s.cum_pseudo_sq += regret.array().square().matrix();
  s.eta = (1.0 + s.cum_pseudo_sq.array()).inverse().matrix();
  const Vector w = s.eta.cwiseProduct(s.cum_pseudo.cwiseMax(0.0));
  const double total = w.sum();
  s.rho = total > 0.0 && std::isfinite(total) ? Vector(w / total) : s.rho_tilde0;
  ++s.steps;
  return s;
}

/// Initial state for a baseline rule.
inline WeightState baseline_init(Rule rule, const Vector& rho_tilde0, double eta = 1.0) {
  switch (rule) {
    case Rule::Ewa: {
      WeightState s = make_weight_state(Rule::Ewa, rho_tilde0);
      s.eta.setConstant(eta);
      return s;
    }
    case Rule::Boa: return boa_init(rho_tilde0);
    case Rule::MlPoly: {
      WeightState s = make_weight_state(Rule::MlPoly, rho_tilde0);
      s.eta.setOnes();
      return s;
    }
    default: throw std::invalid_argument("baseline_init: not a baseline rule: " + std::string(to_string(rule)));
  }
}

/// Dispatches one baseline update from observed losses. EWA uses the rate held in the state.
inline WeightState baseline_update(const WeightState& state, const ObservedLosses& losses) {
  switch (state.rule) {
    case Rule::Ewa: return ewa_update(state, losses.expert, state.eta.size() > 0 ? state.eta(0) : 1.0);
    case Rule::Boa: return boa_update(state, (losses.expert.array() - losses.aggregate).matrix());
    case Rule::MlPoly: return mlpoly_update(state, (losses.aggregate - losses.expert.array()).matrix());
    default:
      throw std::invalid_argument("baseline_update: unknown baseline rule " + std::string(to_string(state.rule)));
  }
}

}  // namespace kao
