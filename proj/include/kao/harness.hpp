#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "kao/aggregation.hpp"
#include "kao/bank.hpp"
#include "kao/baselines.hpp"
#include "kao/kalman.hpp"
#include "kao/smoother.hpp"

namespace kao {

// ---------------------------------------------------------------------------
// Expert pass: forecasts and risks of every expert, independent of the rule.

enum class Refit { None, Em };

struct ExpertRunOptions {
  /// Refit period in steps; 0 disables refitting.
  std::size_t window = 0;
  Refit refit = Refit::None;
  EmOptions em{};
  /// Worker threads across experts (1 = sequential).
  unsigned threads = 1;
};

/// Per-step expert output. Rows are t = 1..T, columns experts.
struct ExpertTrace {
  Matrix y_hat;
  /// x' P x in absolute units (P the filter covariance times the model sigma2).
  Matrix xpx;
  /// Model sigma2 in force when the forecast was made.
  Matrix sigma2;
  std::vector<std::string> names;
  std::vector<StateSpaceModel> final_models;
  std::size_t refits = 0;
  std::size_t refit_failures = 0;
  std::vector<std::string> log;

  [[nodiscard]] Eigen::Index horizon() const { return y_hat.rows(); }
  [[nodiscard]] Eigen::Index size() const { return y_hat.cols(); }
};

namespace detail {

inline Design expert_design(const Expert& e, const Design& X) {
  Design out(X.rows(), static_cast<Eigen::Index>(e.columns.size()));
  for (std::size_t j = 0; j < e.columns.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = X.col(e.columns[j]);
  return out;
}

inline KalmanState refilter(const StateSpaceModel& fm, const Design& X, const Vector& y, Eigen::Index n) {
  KalmanState s = kalman_init(fm);
  for (Eigen::Index t = 0; t < n; ++t) s = kalman_step(fm, s, X.row(t).transpose(), y(t));
  return s;
}

struct SingleExpertResult {
  StateSpaceModel model;
  std::size_t refits = 0;
  std::size_t failures = 0;
  std::vector<std::string> log;
};

// Runs one expert through the stream. Parameters are frozen inside each
// window; after a refit at step p*window the filter is re-run from t = 1
// with the new parameters so the next forecast uses them.
inline SingleExpertResult run_single_expert(const Expert& e, const Design& X, const Vector& y,
                                            const ExpertRunOptions& opt, Eigen::Index col, ExpertTrace& out) {
  const Design Xm = expert_design(e, X);
  const auto T = y.size();
  SingleExpertResult r{e.model, 0, 0, {}};
  StateSpaceModel fm = normalized_filter_model(r.model);
  KalmanState s = kalman_init(fm);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector x = Xm.row(t).transpose();
    const double s2 = r.model.sigma2();
    out.y_hat(t, col) = x.dot(s.theta_hat);
    out.xpx(t, col) = s2 * x.dot(s.P * x);
    out.sigma2(t, col) = s2;
    s = kalman_step(fm, s, x, y(t));
    const auto seen = static_cast<std::size_t>(t + 1);
    if (opt.refit == Refit::Em && opt.window > 0 && seen % opt.window == 0 && t + 1 < T) {
      try {
        auto fit = em_fit(Xm.topRows(t + 1), y.head(t + 1), r.model, opt.em);
        r.model = fit.model;
        fm = normalized_filter_model(r.model);
        s = refilter(fm, Xm, y, t + 1);
        ++r.refits;
      } catch (const std::exception& ex) {
        ++r.failures;
        r.log.push_back("expert '" + e.name + "' refit at t=" + std::to_string(seen) +
                        " failed, keeping previous parameters: " + ex.what());
      }
    }
  }
  return r;
}

}  // namespace detail

inline ExpertTrace run_experts(const ExpertBank& bank, const Design& X, const Vector& y,
                               const ExpertRunOptions& opt = {}) {
  require_dim(X.rows(), y.size(), "run_experts rows");
  require_dim(X.cols(), bank.global_dim(), "run_experts design columns");
  require(y.size() > 0, "run_experts: empty stream");
  require(X.allFinite() && y.allFinite(), "run_experts: non-finite data");
  if (opt.refit == Refit::Em && opt.window > 0) {
    Eigen::Index dmax = 0;
    for (const auto& e : bank.experts()) dmax = std::max(dmax, e.model.dim());
    require(opt.window >= static_cast<std::size_t>(2 * dmax), "run_experts: window must be >= 2 * max expert dimension");
  }
  const auto T = y.size();
  const auto M = bank.size();
  ExpertTrace tr;
  tr.y_hat.resize(T, M);
  tr.xpx.resize(T, M);
  tr.sigma2.resize(T, M);
  tr.names = bank.names();
  std::vector<std::optional<detail::SingleExpertResult>> results(static_cast<std::size_t>(M));
  std::vector<std::string> errors;
  std::mutex err_mu;
  std::atomic<Eigen::Index> next{0};
  auto worker = [&] {
    for (Eigen::Index m = next++; m < M; m = next++) {
      try {
        results[static_cast<std::size_t>(m)] = detail::run_single_expert(bank[m], X, y, opt, m, tr);
      } catch (const std::exception& ex) {
        const std::lock_guard<std::mutex> lock(err_mu);
        errors.push_back("expert '" + bank[m].name + "': " + ex.what());
      }
    }
  };
  const unsigned n = std::max(1U, std::min<unsigned>(opt.threads, static_cast<unsigned>(M)));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (!errors.empty()) throw NumericalError(errors.front());
  for (auto& r : results) {
    tr.final_models.push_back(r->model);
    tr.refits += r->refits;
    tr.refit_failures += r->failures;
    tr.log.insert(tr.log.end(), r->log.begin(), r->log.end());
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Risk used by the KAO rules.

enum class RiskSource {
  /// x'Px + sigma2 with the model sigma2.
  Model,
  /// x'Px + sigma2_hat, sigma2_hat the burn-in mean squared residual, frozen.
  BurnIn,
  /// (y_hat - mu)^2 + sigma2 from the simulation truth.
  Exact,
};

inline constexpr double kSigma2Floor = 1e-8;

/// sigma2_hat = mean of (y_s - y_hat_s)^2 over start <= s < burn_in, floored at 1e-8.
inline double estimate_sigma2(const Vector& y, const Vector& y_hat, std::size_t burn_in, std::size_t start = 0) {
  require(burn_in >= 1, "estimate_sigma2: burn_in must be >= 1");
  require(burn_in <= static_cast<std::size_t>(y.size()), "estimate_sigma2: burn_in exceeds the horizon");
  require(start < burn_in, "estimate_sigma2: empty estimation period");
  require_dim(y_hat.size(), y.size(), "estimate_sigma2");
  const auto n = static_cast<Eigen::Index>(burn_in - start);
  const auto a = static_cast<Eigen::Index>(start);
  const double s2 = (y.segment(a, n) - y_hat.segment(a, n)).squaredNorm() / static_cast<double>(n);
  return std::max(s2, kSigma2Floor);
}

struct Truth {
  Vector mu;
  double sigma2 = 1.0;
};

inline Matrix effective_risk(const ExpertTrace& tr, const Vector& y, RiskSource src, std::size_t burn_in,
                             const std::optional<Truth>& truth, std::size_t warmup = 0) {
  switch (src) {
    case RiskSource::Model: return tr.xpx + tr.sigma2;
    case RiskSource::BurnIn: {
      Matrix r = tr.xpx;
      for (Eigen::Index m = 0; m < tr.size(); ++m) {
        r.col(m).array() += estimate_sigma2(y, tr.y_hat.col(m), burn_in, warmup);
      }
      return r;
    }
    case RiskSource::Exact: {
      require(truth.has_value(), "effective_risk: exact risks need the simulation truth");
      require_dim(truth->mu.size(), y.size(), "effective_risk mu");
      Matrix r(tr.horizon(), tr.size());
      for (Eigen::Index m = 0; m < tr.size(); ++m) {
        r.col(m) = ((tr.y_hat.col(m) - truth->mu).array().square() + truth->sigma2).matrix();
      }
      return r;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Aggregation pass.

struct RuleSpec {
  Rule rule = Rule::KaoAda;
  /// Learning rate for KAO-MS, KAO-GRAD, EWA, or a common rate for KAO-ML; <= 0 selects the automatic rate.
  double eta = 0.0;
  /// Gradient bound G for the KAO-GRAD / KAO-ML rates; <= 0 uses 1.5 x the burn-in max |L|.
  double g_bound = 0.0;
  /// Deviation bound D for the KAO-MS rate; <= 0 uses 1.5 x the burn-in max |y - y_hat|.
  double d_bound = 0.0;
  /// Baselines only: linearised square loss instead of the observed squared loss.
  bool gradient_trick = false;
  /// Prior weights; empty means uniform.
  Vector prior;
};

struct AggregationOptions {
  /// Leading steps ignored by the rules (experts not yet fitted).
  std::size_t warmup = 0;
  /// Weights stay at the prior for t < burn_in; steps warmup..burn_in-1
  /// calibrate the rates and are then replayed through the rule.
  std::size_t burn_in = 0;
  RiskSource risk = RiskSource::Model;
  std::optional<Truth> truth;
};

struct RuleRun {
  RuleSpec spec;
  Vector y_agg;
  /// Row t holds the weights used to forecast y_t.
  Matrix rho;
  Matrix eta;
  /// Centered pseudo-losses computed with rho_t.
  Matrix pseudo;
  std::size_t rate_violations = 0;
};

namespace detail {

struct Calibration {
  double g = 1.0;
  double d = 1.0;
  double loss_range = 1.0;
};

inline Calibration calibrate(const ExpertTrace& tr, const Matrix& risk, const Vector& y, const Vector& prior,
                             std::size_t warmup, std::size_t burn_in) {
  Calibration c;
  double g = 0.0;
  double d = 0.0;
  double l = 0.0;
  for (auto t = static_cast<Eigen::Index>(warmup); t < static_cast<Eigen::Index>(burn_in); ++t) {
    const ExpertSnapshot sn{tr.y_hat.row(t).transpose(), risk.row(t).transpose()};
    g = std::max(g, pseudo_loss(sn, prior).cwiseAbs().maxCoeff());
    const Vector dev = (sn.y_hat.array() - y(t)).abs().matrix();
    d = std::max(d, dev.maxCoeff());
    l = std::max(l, dev.maxCoeff() * dev.maxCoeff());
  }
  if (g > 0.0) c.g = 1.5 * g;
  if (d > 0.0) c.d = 1.5 * d;
  if (l > 0.0) c.loss_range = 1.5 * l;
  return c;
}

inline WeightState init_rule(RuleSpec& spec, const Vector& prior, const Calibration& cal, std::size_t horizon) {
  const auto M = prior.size();
  const std::size_t Te = std::max<std::size_t>(horizon, 1);
  const double g = spec.g_bound > 0.0 ? spec.g_bound : cal.g;
  switch (spec.rule) {
    case Rule::KaoMs: {
      if (spec.eta <= 0.0) spec.eta = kao_ms_rate(spec.d_bound > 0.0 ? spec.d_bound : cal.d);
      WeightState s = make_weight_state(Rule::KaoMs, prior);
      s.eta.setConstant(spec.eta);
      return s;
    }
    case Rule::KaoGrad: {
      if (spec.eta <= 0.0) spec.eta = M > 1 ? kao_grad_rate(g, M, Te) : 1.0;
      WeightState s = make_weight_state(Rule::KaoGrad, prior);
      s.eta.setConstant(spec.eta);
      return s;
    }
    case Rule::KaoMl: {
      Vector eta(M);
      for (Eigen::Index m = 0; m < M; ++m) {
        eta(m) = spec.eta > 0.0 ? spec.eta : (prior(m) < 1.0 ? kao_ml_rate(g, prior(m), Te) : 1.0);
        if (!(eta(m) > 0.0)) eta(m) = 1.0;  // zero prior weight: the rate is irrelevant
      }
      return kao_ml_init(prior, eta);
    }
    case Rule::KaoAda: return kao_ada_init(prior);
    case Rule::Ewa:
      if (spec.eta <= 0.0) spec.eta = std::sqrt(8.0 * std::log(static_cast<double>(std::max<Eigen::Index>(M, 2))) /
                                                static_cast<double>(Te)) /
                                      cal.loss_range;
      return baseline_init(Rule::Ewa, prior, spec.eta);
    case Rule::Boa:
    case Rule::MlPoly: return baseline_init(spec.rule, prior);
  }
  throw std::invalid_argument("init_rule: unknown rule");
}

inline WeightState step_rule(const WeightState& s, const RuleSpec& spec, const ExpertSnapshot& sn,
                             const Vector& pseudo, double y) {
  switch (spec.rule) {
    case Rule::KaoMs: return kao_ms_update(s, sn, spec.eta);
    case Rule::KaoGrad: return kao_grad_update(s, pseudo, spec.eta);
    case Rule::KaoMl: return kao_ml_update(s, pseudo);
    case Rule::KaoAda: return kao_ada_update(s, pseudo);
    default: return baseline_update(s, observed_losses(y, sn.y_hat, s.rho, spec.gradient_trick));
  }
}

}  // namespace detail

/// Aggregates precomputed expert forecasts. At step t the forecast
/// y_agg_t = rho_t . y_hat_t is formed before y_t is used; y_t then feeds
/// the pseudo-loss and the weight update that produces rho_{t+1}.
/// Steps before `warmup` are ignored. With burn_in > 0 the weights stay at
/// the prior until step burn_in - 1 is observed; the rates are then
/// calibrated on steps warmup..burn_in-1 and the rule is replayed over them,
/// so rho_{burn_in} already reflects the burn-in observations.
inline RuleRun run_rule(const ExpertTrace& tr, const Matrix& risk, const Vector& y, RuleSpec spec,
                        std::size_t burn_in, std::size_t warmup = 0) {
  const auto T = tr.horizon();
  const auto M = tr.size();
  require_dim(y.size(), T, "run_rule y");
  require(risk.rows() == T && risk.cols() == M, "run_rule: risk matrix shape mismatch");
  require(burn_in < static_cast<std::size_t>(T), "run_rule: burn_in must be < horizon");
  require(warmup < burn_in || (warmup == 0 && burn_in == 0), "run_rule: warmup must be < burn_in");
  const Vector prior = spec.prior.size() ? spec.prior : uniform_weights(M);
  require_dim(prior.size(), M, "run_rule prior");
  require(in_simplex(prior), "run_rule: prior must lie in the simplex");
  spec.prior = prior;

  RuleRun out;
  out.y_agg.resize(T);
  out.rho.resize(T, M);
  out.eta = Matrix::Zero(T, M);
  out.pseudo.resize(T, M);

  const auto updates = static_cast<std::size_t>(T) - warmup;
  auto snapshot = [&](Eigen::Index t) { return ExpertSnapshot{tr.y_hat.row(t).transpose(), risk.row(t).transpose()}; };
  std::optional<WeightState> state;
  if (burn_in == 0) state = detail::init_rule(spec, prior, detail::Calibration{}, updates);
  for (Eigen::Index t = 0; t < T; ++t) {
    const ExpertSnapshot sn = snapshot(t);
    const Vector rho = state ? state->rho : prior;
    out.rho.row(t) = rho.transpose();
    if (state) out.eta.row(t) = state->eta.transpose();
    out.y_agg(t) = aggregate(rho, sn.y_hat);
    const Vector pseudo = pseudo_loss(sn, rho);
    out.pseudo.row(t) = pseudo.transpose();
    if (state) {
      state = detail::step_rule(*state, spec, sn, pseudo, y(t));
    } else if (static_cast<std::size_t>(t + 1) == burn_in) {
      const auto cal = detail::calibrate(tr, risk, y, prior, warmup, burn_in);
      state = detail::init_rule(spec, prior, cal, updates);
      for (auto s = static_cast<Eigen::Index>(warmup); s <= t; ++s) {
        const ExpertSnapshot past = snapshot(s);
        state = detail::step_rule(*state, spec, past, pseudo_loss(past, state->rho), y(s));
      }
    }
  }
  out.spec = spec;
  out.rate_violations = state ? state->rate_violations : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Full run record.

struct RunRecord {
  Vector y;
  ExpertTrace trace;
  Matrix risk;
  std::vector<RuleRun> rules;
  std::size_t warmup = 0;
  std::size_t burn_in = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::optional<Truth> truth;

  [[nodiscard]] Eigen::Index horizon() const { return y.size(); }
  [[nodiscard]] const RuleRun& rule(Rule r) const {
    for (const auto& rr : rules)
      if (rr.spec.rule == r) return rr;
    throw std::invalid_argument("RunRecord: no run for rule " + std::string(to_string(r)));
  }
};

/// Aggregates an existing expert trace under every requested rule.
inline RunRecord aggregate_trace(ExpertTrace trace, const Vector& y, const std::vector<RuleSpec>& specs,
                                 const AggregationOptions& opt) {
  RunRecord rec;
  rec.y = y;
  rec.warmup = opt.warmup;
  rec.burn_in = opt.burn_in;
  rec.truth = opt.truth;
  rec.risk = effective_risk(trace, y, opt.risk, opt.burn_in, opt.truth, opt.warmup);
  rec.trace = std::move(trace);
  for (const auto& s : specs) rec.rules.push_back(run_rule(rec.trace, rec.risk, y, s, opt.burn_in, opt.warmup));
  return rec;
}

/// Expert pass (with optional sliding-window refits) followed by every rule.
inline RunRecord run_online(const ExpertBank& bank, const ObservationStream& stream, const std::vector<RuleSpec>& specs,
                            const AggregationOptions& agg = {}, const ExpertRunOptions& experts = {}) {
  stream.validate();
  return aggregate_trace(run_experts(bank, stream.X, stream.y, experts), stream.y, specs, agg);
}

}  // namespace kao
