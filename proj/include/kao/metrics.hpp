#pragma once

#include <string>
#include <vector>

#include "kao/convex.hpp"
#include "kao/harness.hpp"

namespace kao {

struct RuleMetrics {
  std::string rule;
  double mse = 0.0;
  double relative_rmse = 0.0;
  /// Running sum of squared errors over the evaluation period.
  Vector cum_sq_error;
  /// Exact-risk regrets; present only when the truth is known.
  std::optional<Vector> regret_selection;  // R^S(m) for every m
  std::optional<double> regret_aggregation;  // R^A(pi*)
  std::size_t rate_violations = 0;
};

struct MetricsReport {
  std::size_t eval_start = 0;
  std::size_t eval_length = 0;
  Vector expert_mse;
  Eigen::Index best_expert = 0;
  double best_expert_mse = 0.0;
  double uniform_mse = 0.0;
  ConvexOracleResult best_convex;
  std::vector<RuleMetrics> rules;
  /// Cumulative exact risk of each expert over the evaluation period (truth only).
  std::optional<Vector> expert_cum_risk;

  [[nodiscard]] const RuleMetrics& rule(const std::string& name) const {
    for (const auto& r : rules)
      if (r.rule == name) return r;
    throw std::invalid_argument("MetricsReport: no rule " + name);
  }
};

inline double mse(const Vector& y, const Vector& pred) {
  require_dim(pred.size(), y.size(), "mse");
  require(y.size() > 0, "mse: empty input");
  return (y - pred).squaredNorm() / static_cast<double>(y.size());
}

/// Exact conditional risk (y_hat - mu)^2 + sigma2 per step.
inline Vector exact_risk(const Vector& y_hat, const Truth& truth) {
  return ((y_hat - truth.mu).array().square() + truth.sigma2).matrix();
}

/// Metrics over t > burn_in (the evaluation period).
inline MetricsReport compute_metrics(const RunRecord& rec, std::uint64_t seed = 0) {
  const auto T = rec.horizon();
  const auto start = static_cast<Eigen::Index>(rec.burn_in);
  const auto n = T - start;
  require(n > 0, "compute_metrics: empty evaluation period");
  const Vector y = rec.y.tail(n);
  const Matrix F = rec.trace.y_hat.bottomRows(n);
  const auto M = F.cols();

  MetricsReport r;
  r.eval_start = rec.burn_in;
  r.eval_length = static_cast<std::size_t>(n);
  r.expert_mse.resize(M);
  for (Eigen::Index m = 0; m < M; ++m) r.expert_mse(m) = mse(y, F.col(m));
  r.best_expert_mse = r.expert_mse.minCoeff(&r.best_expert);
  r.uniform_mse = mse(y, F.rowwise().mean());
  r.best_convex = best_convex_oracle(F, y, seed);

  std::optional<Truth> truth;
  std::optional<Vector> agg_risk_star;
  if (rec.truth) {
    truth = Truth{rec.truth->mu.tail(n), rec.truth->sigma2};
    Vector cum(M);
    for (Eigen::Index m = 0; m < M; ++m) cum(m) = exact_risk(F.col(m), *truth).sum();
    r.expert_cum_risk = cum;
    agg_risk_star = exact_risk(F * r.best_convex.pi, *truth);
  }

  for (const auto& rr : rec.rules) {
    RuleMetrics rm;
    rm.rule = std::string(to_string(rr.spec.rule));
    if (rr.spec.gradient_trick && is_baseline(rr.spec.rule)) rm.rule += "-GT";
    const Vector agg = rr.y_agg.tail(n);
    rm.mse = mse(y, agg);
    rm.relative_rmse = r.best_convex.mse > 0.0 ? std::sqrt(rm.mse / r.best_convex.mse) : 0.0;
    rm.rate_violations = rr.rate_violations;
    rm.cum_sq_error.resize(n);
    double acc = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
      acc += (y(t) - agg(t)) * (y(t) - agg(t));
      rm.cum_sq_error(t) = acc;
    }
    if (truth) {
      const double agg_risk = exact_risk(agg, *truth).sum();
      rm.regret_selection = (agg_risk - r.expert_cum_risk->array()).matrix();
      rm.regret_aggregation = agg_risk - agg_risk_star->sum();
    }
    r.rules.push_back(std::move(rm));
  }
  return r;
}

}  // namespace kao
