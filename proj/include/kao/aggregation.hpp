#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

#include "kao/types.hpp"

namespace kao {

enum class Rule { KaoMs, KaoGrad, KaoMl, KaoAda, Ewa, Boa, MlPoly };

inline constexpr std::array<Rule, 7> kAllRules = {Rule::KaoMs, Rule::KaoGrad, Rule::KaoMl, Rule::KaoAda,
                                                  Rule::Ewa,   Rule::Boa,     Rule::MlPoly};

inline std::string_view to_string(Rule r) {
  switch (r) {
    case Rule::KaoMs: return "KAO-MS";
    case Rule::KaoGrad: return "KAO-GRAD";
    case Rule::KaoMl: return "KAO-ML";
    case Rule::KaoAda: return "KAO-ADA";
    case Rule::Ewa: return "EWA";
    case Rule::Boa: return "BOA";
    case Rule::MlPoly: return "MLPOLY";
  }
  return "?";
}

inline std::optional<Rule> parse_rule(std::string_view name) {
  for (Rule r : kAllRules) {
    if (to_string(r) == name) return r;
  }
  return std::nullopt;
}

inline std::string valid_rule_names() {
  std::string out;
  for (Rule r : kAllRules) {
    if (!out.empty()) out += ", ";
    out += to_string(r);
  }
  return out;
}

inline bool is_baseline(Rule r) { return r == Rule::Ewa || r == Rule::Boa || r == Rule::MlPoly; }

inline constexpr double kSimplexTol = 1e-12;

/// Per-expert forecasts and predictive risks x'P^(m)x + sigma2^(m) at one step.
struct ExpertSnapshot {
  Vector y_hat;
  Vector risk;

  [[nodiscard]] Eigen::Index size() const { return y_hat.size(); }

  void validate() const {
    require_dim(risk.size(), y_hat.size(), "ExpertSnapshot risk");
    require(y_hat.allFinite() && risk.allFinite(), "ExpertSnapshot: non-finite entry");
    require((risk.array() > 0.0).all(), "ExpertSnapshot: risks must be > 0");
  }
};

/// Weights and learning-rate accumulators of one aggregation stream.
struct WeightState {
  Rule rule = Rule::KaoMs;
  /// Current weights rho_t (simplex).
  Vector rho;
  /// Prior rho~_0 (simplex).
  Vector rho_tilde0;
  /// Unnormalised log-weights for the multiplicative rules, max-shifted to 0.
  Vector log_rho;
  /// Running sums of the per-step feedback, its square, and the second-order surrogate.
  Vector cum_pseudo;
  Vector cum_pseudo_sq;
  Vector cum_surrogate;
  /// Current learning rates (the constant rate for single-rate rules).
  Vector eta;
  /// Running max |feedback| (BOA range estimate).
  Vector max_abs;
  std::size_t steps = 0;
  /// Count of updates where some |eta * feedback| exceeded 1/2.
  std::size_t rate_violations = 0;

  [[nodiscard]] Eigen::Index size() const { return rho.size(); }
};

inline bool in_simplex(const Vector& w, double tol = 1e-9) {
  return w.size() > 0 && w.allFinite() && (w.array() >= 0.0).all() && std::abs(w.sum() - 1.0) <= tol;
}

inline Vector uniform_weights(Eigen::Index m) {
  require(m >= 1, "uniform_weights: need at least one expert");
  return Vector::Constant(m, 1.0 / static_cast<double>(m));
}

/// exp(log_w) normalised onto the simplex with a max shift. Entries at -inf
/// get weight 0; if nothing finite remains the result is uniform.
inline Vector normalized_exp(const Vector& log_w) {
  const double mx = log_w.maxCoeff();
  if (!std::isfinite(mx)) return uniform_weights(log_w.size());
  Vector w = (log_w.array() - mx).exp().matrix();
  const double s = w.sum();
  if (!(s > 0.0) || !std::isfinite(s)) return uniform_weights(log_w.size());
  return w / s;
}

namespace detail {

inline Vector safe_log(const Vector& w) {
  Vector out(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    out(i) = w(i) > 0.0 ? std::log(w(i)) : -std::numeric_limits<double>::infinity();
  }
  return out;
}

inline void shift_log_weights(WeightState& s) {
  const double mx = s.log_rho.maxCoeff();
  if (std::isfinite(mx)) s.log_rho.array() -= mx;
}

inline void require_rule(const WeightState& s, Rule r, const char* op) {
  if (s.rule != r) throw std::invalid_argument(std::string(op) + ": state belongs to rule " + std::string(to_string(s.rule)));
}

inline void require_feedback(const WeightState& s, const Vector& v, const char* op) {
  require_dim(v.size(), s.size(), op);
  if (!v.allFinite()) throw std::invalid_argument(std::string(op) + ": non-finite feedback");
}

}  // namespace detail

/// Fresh state for any rule; rho_tilde0 defaults to uniform.
inline WeightState make_weight_state(Rule rule, const Vector& rho_tilde0) {
  require(in_simplex(rho_tilde0), "make_weight_state: prior must lie in the simplex");
  const auto m = rho_tilde0.size();
  WeightState s;
  s.rule = rule;
  s.rho_tilde0 = rho_tilde0;
  s.rho = rho_tilde0;
  s.log_rho = detail::safe_log(rho_tilde0);
  detail::shift_log_weights(s);
  s.cum_pseudo = Vector::Zero(m);
  s.cum_pseudo_sq = Vector::Zero(m);
  s.cum_surrogate = Vector::Zero(m);
  s.eta = Vector::Zero(m);
  s.max_abs = Vector::Zero(m);
  return s;
}

inline double aggregate(const Vector& rho, const Vector& y_hat) {
  require_dim(y_hat.size(), rho.size(), "aggregate");
  return rho.dot(y_hat);
}

/// Centered linearised risk
///   raw^(m) = risk^(m) - (y_agg - y_hat^(m))^2,   L^(m) = raw^(m) - sum_m' rho^(m') raw^(m'),
/// with y_agg = sum rho y_hat. Satisfies sum_m rho^(m) L^(m) = 0.
inline Vector pseudo_loss(const ExpertSnapshot& snap, const Vector& rho) {
  snap.validate();
  require_dim(rho.size(), snap.size(), "pseudo_loss rho");
  const double y_agg = rho.dot(snap.y_hat);
  const Vector raw = snap.risk - (snap.y_hat.array() - y_agg).square().matrix();
  return (raw.array() - rho.dot(raw)).matrix();
}

// ---------------------------------------------------------------------------
// KAO for model selection: rho_{t+1} ∝ exp(-eta * risk) rho_t.

inline double kao_ms_rate(double d_bound) {
  require(d_bound > 0.0, "kao_ms_rate: D must be > 0");
  return 1.0 / (2.0 * d_bound * d_bound);
}

inline WeightState kao_ms_update(const WeightState& state, const ExpertSnapshot& snap, double eta) {
  detail::require_rule(state, Rule::KaoMs, "kao_ms_update");
  require(eta > 0.0, "kao_ms_update: eta must be > 0");
  snap.validate();
  require_dim(snap.size(), state.size(), "kao_ms_update snapshot");
  WeightState s = state;
  s.eta.setConstant(eta);
  s.cum_pseudo += snap.risk;
  s.log_rho -= eta * snap.risk;
  detail::shift_log_weights(s);
  s.rho = normalized_exp(s.log_rho);
  ++s.steps;
  return s;
}

// ---------------------------------------------------------------------------
// KAO for aggregation: rho_{t+1} ∝ exp(-eta * L_t) rho_t.

/// eta = (1/G) sqrt(2 log M / t).
inline double kao_grad_rate(double g_bound, Eigen::Index m, std::size_t t) {
  require(g_bound > 0.0 && m >= 1 && t >= 1, "kao_grad_rate: need G > 0, M >= 1, t >= 1");
  return std::sqrt(2.0 * std::log(static_cast<double>(m)) / static_cast<double>(t)) / g_bound;
}

inline WeightState kao_grad_update(const WeightState& state, const Vector& pseudo, double eta) {
  detail::require_rule(state, Rule::KaoGrad, "kao_grad_update");
  require(eta > 0.0, "kao_grad_update: eta must be > 0");
  detail::require_feedback(state, pseudo, "kao_grad_update");
  WeightState s = state;
  s.eta.setConstant(eta);
  s.cum_pseudo += pseudo;
  s.cum_pseudo_sq += pseudo.array().square().matrix();
  s.log_rho -= eta * pseudo;
  detail::shift_log_weights(s);
  s.rho = normalized_exp(s.log_rho);
  ++s.steps;
  return s;
}

// ---------------------------------------------------------------------------
// KAO with multiple learning rates.

/// eta^(m) = (1/G) (sqrt(-log rho~_0^(m) / t) ∧ 1/2).
inline double kao_ml_rate(double g_bound, double rho_tilde0_m, std::size_t t) {
  require(g_bound > 0.0 && t >= 1, "kao_ml_rate: need G > 0, t >= 1");
  require(rho_tilde0_m > 0.0 && rho_tilde0_m <= 1.0, "kao_ml_rate: prior weight must be in (0, 1]");
  return std::min(std::sqrt(-std::log(rho_tilde0_m) / static_cast<double>(t)), 0.5) / g_bound;
}

/// rho_0^(m) ∝ eta^(m) rho~_0^(m).
inline WeightState kao_ml_init(const Vector& rho_tilde0, const Vector& eta) {
  require(in_simplex(rho_tilde0), "kao_ml_init: prior must lie in the simplex");
  require_dim(eta.size(), rho_tilde0.size(), "kao_ml_init eta");
  require(eta.allFinite() && (eta.array() > 0.0).all(), "kao_ml_init: learning rates must be > 0");
  WeightState s = make_weight_state(Rule::KaoMl, rho_tilde0);
  s.eta = eta;
  const Vector w = eta.cwiseProduct(rho_tilde0);
  s.rho = w / w.sum();
  s.log_rho = detail::safe_log(s.rho);
  detail::shift_log_weights(s);
  return s;
}

/// rho_{t+1}^(m) ∝ exp(-eta^(m) L^(m) (1 + eta^(m) L^(m))) rho_t^(m).
inline WeightState kao_ml_update(const WeightState& state, const Vector& pseudo) {
  detail::require_rule(state, Rule::KaoMl, "kao_ml_update");
  detail::require_feedback(state, pseudo, "kao_ml_update");
  WeightState s = state;
  const Vector el = s.eta.cwiseProduct(pseudo);
  if ((el.array().abs() > 0.5).any()) ++s.rate_violations;
  const Vector surrogate = pseudo.cwiseProduct((1.0 + el.array()).matrix());
  s.cum_pseudo += pseudo;
  s.cum_pseudo_sq += pseudo.array().square().matrix();
  s.cum_surrogate += surrogate;
  s.log_rho -= s.eta.cwiseProduct(surrogate);
  detail::shift_log_weights(s);
  s.rho = normalized_exp(s.log_rho);
  ++s.steps;
  return s;
}

/// rho~_t ∝ rho_t / eta: the distribution under which (eta L_t) is centered.
inline Vector kao_ml_tilde_weights(const WeightState& state) {
  const Vector w = state.rho.cwiseQuotient(state.eta);
  return w / w.sum();
}

// ---------------------------------------------------------------------------
// KAO with adaptive multiple learning rates.

namespace detail {

inline Vector adaptive_rates(const Vector& rho_tilde0, const Vector& cum_sq) {
  Vector eta(rho_tilde0.size());
  for (Eigen::Index m = 0; m < eta.size(); ++m) {
    eta(m) = std::sqrt(-std::log(rho_tilde0(m)) / (1.0 + cum_sq(m)));
  }
  return eta;
}

// rho ∝ eta * exp(-eta * cum) * rho~_0, in log space.
inline Vector second_order_weights(const Vector& eta, const Vector& cum, const Vector& rho_tilde0) {
  if (eta.size() == 1) return Vector::Ones(1);
  Vector lw(eta.size());
  for (Eigen::Index m = 0; m < eta.size(); ++m) {
    lw(m) = eta(m) > 0.0 ? std::log(eta(m)) - eta(m) * cum(m) + std::log(rho_tilde0(m))
                         : -std::numeric_limits<double>::infinity();
  }
  return normalized_exp(lw);
}

}  // namespace detail

inline WeightState kao_ada_init(const Vector& rho_tilde0) {
  require(in_simplex(rho_tilde0), "kao_ada_init: prior must lie in the simplex");
  const auto m = rho_tilde0.size();
  if (m > 1) {
    require((rho_tilde0.array() > 0.0).all() && (rho_tilde0.array() < 1.0).all(),
            "kao_ada_init: every prior weight must lie in (0, 1); -log rho~_0 = 0 freezes that rate at 0");
  }
  WeightState s = make_weight_state(Rule::KaoAda, rho_tilde0);
  s.eta = detail::adaptive_rates(rho_tilde0, s.cum_pseudo_sq);
  s.rho = detail::second_order_weights(s.eta, s.cum_surrogate, rho_tilde0);
  return s;
}

/// Accumulates L_t (1 + eta_{t-1} L_t) with the previous rates, then sets
/// eta_t = sqrt(-log rho~_0 / (1 + sum L_s^2)) and
/// rho_{t+1} ∝ eta_t exp(-eta_t * sum_s L_s (1 + eta_{s-1} L_s)) rho~_0.
inline WeightState kao_ada_update(const WeightState& state, const Vector& pseudo) {
  detail::require_rule(state, Rule::KaoAda, "kao_ada_update");
  detail::require_feedback(state, pseudo, "kao_ada_update");
  WeightState s = state;
  const Vector el = s.eta.cwiseProduct(pseudo);
  if ((el.array().abs() > 0.5).any()) ++s.rate_violations;
  s.cum_surrogate += pseudo.cwiseProduct((1.0 + el.array()).matrix());
  s.cum_pseudo += pseudo;
  s.cum_pseudo_sq += pseudo.array().square().matrix();
  s.eta = detail::adaptive_rates(s.rho_tilde0, s.cum_pseudo_sq);
  s.rho = detail::second_order_weights(s.eta, s.cum_surrogate, s.rho_tilde0);
  ++s.steps;
  return s;
}

// ---------------------------------------------------------------------------
// Exp-concavity of the conditional risk L(y) = (y - mu)^2 + sigma2.

/// max over the grid of phi''(y) = -2 eta phi(y) (1 - 2 eta (y - mu)^2), phi = exp(-eta L).
inline double exp_concavity_probe(const Vector& y_grid, double mu, double sigma2, double eta) {
  require(y_grid.size() > 0, "exp_concavity_probe: empty grid");
  require(sigma2 > 0.0 && eta > 0.0, "exp_concavity_probe: need sigma2 > 0 and eta > 0");
  double worst = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < y_grid.size(); ++i) {
    const double dev2 = (y_grid(i) - mu) * (y_grid(i) - mu);
    const double phi = std::exp(-eta * (dev2 + sigma2));
    worst = std::max(worst, -2.0 * eta * phi * (1.0 - 2.0 * eta * dev2));
  }
  return worst;
}

}  // namespace kao
