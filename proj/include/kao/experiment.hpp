#pragma once

// Experiment drivers: the synthetic covariate study, learning-rate grid
// selection, replication batches and the expert-correction pipeline.

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "kao/bank.hpp"
#include "kao/config.hpp"
#include "kao/csv.hpp"
#include "kao/harness.hpp"
#include "kao/metrics.hpp"
#include "kao/model.hpp"
#include "kao/rng.hpp"

namespace kao {

// ---------------------------------------------------------------------------
// Covariates and the true model.

/// Raw covariates drawn iid uniform on [0, 1] from the design sub-stream.
inline Design generate_covariates(std::size_t T, Eigen::Index p, std::uint64_t seed) {
  require(T >= 1 && p >= 1, "generate_covariates: empty shape");
  Rng rng = Rng::substream(seed, stream_id::design);
  Design x(static_cast<Eigen::Index>(T), p);
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    for (Eigen::Index j = 0; j < p; ++j) x(t, j) = rng.uniform();
  return x;
}

/// Reads the named columns of a CSV, optionally min-max scaled to [0, 1].
inline Design load_columns(const std::filesystem::path& path, const std::vector<std::string>& names, bool normalize) {
  const Table tab = read_csv(path);
  require(tab.rows() >= 1, "load_columns: '" + path.string() + "' has no data rows");
  Design x(static_cast<Eigen::Index>(tab.rows()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = tab.numeric(names[j]);
  return normalize ? normalize_min_max(x) : x;
}

inline Design apply_transforms(const Design& raw, const std::vector<std::string>& transforms) {
  require_dim(static_cast<Eigen::Index>(transforms.size()), raw.cols(), "apply_transforms");
  Design out = raw;
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    switch (parse_transform(transforms[static_cast<std::size_t>(j)])) {
      case Transform::Identity: break;
      case Transform::Square: out.col(j) = raw.col(j).array().square().matrix(); break;
      case Transform::Cube: out.col(j) = raw.col(j).array().cube().matrix(); break;
    }
  }
  return out;
}

inline std::vector<std::string> transformed_names(const SimulationConfig& s) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < s.covariates.size(); ++j) {
    const auto t = parse_transform(s.transforms[j]);
    out.push_back(s.covariates[j] + (t == Transform::Square ? "^2" : t == Transform::Cube ? "^3" : ""));
  }
  return out;
}

inline Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

/// True model on the true subset; theta0 is drawn once from
/// N(theta0_mean 1, theta0_sd^2 I) on the initial-state sub-stream and then fixed.
inline StateSpaceModel true_model(const SimulationConfig& s, std::uint64_t seed) {
  const auto d = static_cast<Eigen::Index>(s.true_subset.size());
  Rng rng = Rng::substream(seed, stream_id::initial_state);
  Vector theta0(d);
  for (Eigen::Index i = 0; i < d; ++i) theta0(i) = rng.normal(s.theta0_mean, s.theta0_sd);
  const Matrix K = s.K.empty() ? Matrix::Identity(d, d) : to_matrix(s.K);
  return {K, to_matrix(s.Q), s.sigma * s.sigma, theta0, Matrix::Zero(d, d)};
}

struct StudyData {
  /// Transformed covariates (all of them) and the response.
  Design X;
  Vector y;
  Truth truth;
  std::vector<std::string> covariate_names;
  StateSpaceModel model;
  std::vector<Vector> theta_path;
};

inline StudyData simulate_study(const SimulationConfig& s, std::uint64_t seed) {
  const auto p = static_cast<Eigen::Index>(s.covariates.size());
  Design raw = s.covariates_csv.empty() ? generate_covariates(s.horizon, p, seed)
                                        : load_columns(s.covariates_csv, s.covariates, s.normalize);
  if (!s.covariates_csv.empty()) {
    require(static_cast<std::size_t>(raw.rows()) >= s.horizon,
            "simulate_study: covariate CSV shorter than the horizon");
    raw = raw.topRows(static_cast<Eigen::Index>(s.horizon)).eval();
  }
  const Design X = apply_transforms(raw, s.transforms);
  Design Xtrue(X.rows(), static_cast<Eigen::Index>(s.true_subset.size()));
  for (std::size_t j = 0; j < s.true_subset.size(); ++j) Xtrue.col(static_cast<Eigen::Index>(j)) = X.col(s.true_subset[j]);
  StudyData out{X, {}, {}, transformed_names(s), true_model(s, seed), {}};
  ObservationStream st = simulate_ssm(out.model, Xtrue, seed);
  out.y = st.y;
  out.truth = Truth{*st.mu, out.model.sigma2()};
  out.theta_path = std::move(*st.theta_path);
  return out;
}

inline ExpertBank study_bank(const ExperimentConfig& c) {
  const auto p = static_cast<Eigen::Index>(c.simulation.covariates.size());
  return build_subset_bank(transformed_names(c.simulation),
                           study_subsets(p, c.simulation.true_subset, c.bank.size), c.bank.expert_template);
}

inline ExpertRunOptions expert_options(const ExperimentConfig& c, unsigned threads) {
  ExpertRunOptions o;
  o.window = c.experts.window;
  o.refit = parse_refit(c.experts.refit);
  o.em.n_iter = c.experts.em_iterations;
  o.em.tol = c.experts.em_tol;
  o.threads = threads;
  return o;
}

// ---------------------------------------------------------------------------
// Rule runs with optional grid-selected rates.

/// How a rule's rate was obtained.
struct RuleOutcome {
  RuleRun run;
  std::string label;
  /// "auto", "fixed" or "grid".
  std::string eta_source;
  /// Evaluation MSE of every grid point (empty unless eta_source == "grid").
  std::vector<std::pair<double, double>> grid_mse;
};

inline double eval_mse(const Vector& y, const Vector& pred, std::size_t burn_in) {
  const auto n = y.size() - static_cast<Eigen::Index>(burn_in);
  return mse(y.tail(n), pred.tail(n));
}

/// Runs one configured rule. With an eta grid and no fixed rate, every grid
/// point is run and the one with the lowest evaluation MSE is kept. This is
/// hindsight tuning and is reported as such.
inline RuleOutcome run_configured_rule(const ExpertTrace& tr, const Matrix& risk, const Vector& y, const RuleConfig& rc,
                                       std::size_t burn_in, std::size_t warmup) {
  RuleOutcome out;
  out.label = rule_label(rc.spec);
  const bool rated = rc.spec.rule == Rule::KaoMs || rc.spec.rule == Rule::KaoGrad || rc.spec.rule == Rule::KaoMl ||
                     rc.spec.rule == Rule::Ewa;
  if (rc.spec.eta > 0.0 || rc.eta_grid.empty() || !rated) {
    out.run = run_rule(tr, risk, y, rc.spec, burn_in, warmup);
    out.eta_source = rc.spec.eta > 0.0 ? "fixed" : "auto";
    return out;
  }
  out.eta_source = "grid";
  double best = std::numeric_limits<double>::infinity();
  for (double eta : rc.eta_grid) {
    RuleSpec s = rc.spec;
    s.eta = eta;
    RuleRun r = run_rule(tr, risk, y, s, burn_in, warmup);
    const double m = eval_mse(y, r.y_agg, burn_in);
    out.grid_mse.emplace_back(eta, m);
    if (m < best) {
      best = m;
      out.run = std::move(r);
    }
  }
  return out;
}

/// A run record together with rule labels and rate provenance.
struct Experiment {
  RunRecord record;
  std::vector<RuleOutcome> outcomes;
  std::vector<std::string> expert_names;
  MetricsReport metrics;
};

inline Experiment aggregate_configured(ExpertTrace trace, const Vector& y, const std::vector<RuleConfig>& rules,
                                       const AggregationOptions& opt, std::uint64_t seed) {
  Experiment ex;
  ex.expert_names = trace.names;
  RunRecord& rec = ex.record;
  rec.y = y;
  rec.warmup = opt.warmup;
  rec.burn_in = opt.burn_in;
  rec.truth = opt.truth;
  rec.seed = seed;
  rec.risk = effective_risk(trace, y, opt.risk, opt.burn_in, opt.truth, opt.warmup);
  rec.trace = std::move(trace);
  for (const auto& rc : rules) {
    ex.outcomes.push_back(run_configured_rule(rec.trace, rec.risk, y, rc, opt.burn_in, opt.warmup));
    rec.rules.push_back(ex.outcomes.back().run);
  }
  ex.metrics = compute_metrics(rec, seed);
  return ex;
}

// ---------------------------------------------------------------------------
// Synthetic study.

inline std::uint64_t replication_seed(std::uint64_t master, std::size_t r) {
  return derive_seed(master, stream_id::replication_base + r);
}

/// Expert pass and every configured rule on given data. Exact risks need the truth.
inline Experiment run_study_on(const ExperimentConfig& c, const Design& X, const Vector& y,
                               const std::optional<Truth>& truth, std::uint64_t seed, unsigned threads = 1) {
  const ExpertBank bank = study_bank(c);
  require_dim(X.cols(), bank.global_dim(), "run_study_on design columns");
  ExpertTrace tr = run_experts(bank, X, y, expert_options(c, threads));
  AggregationOptions agg;
  agg.warmup = c.aggregation.warmup;
  agg.burn_in = c.aggregation.burn_in;
  agg.risk = parse_risk(c.aggregation.risk);
  agg.truth = truth;
  Experiment ex = aggregate_configured(std::move(tr), y, c.aggregation.rules, agg, seed);
  return ex;
}

inline Experiment run_study(const ExperimentConfig& c, std::uint64_t seed, unsigned threads = 1) {
  const StudyData d = simulate_study(c.simulation, seed);
  return run_study_on(c, d.X, d.y, d.truth, seed, threads);
}

/// Runs `n` independent jobs over at most `threads` workers; the first
/// exception is rethrown after all workers finish.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  const unsigned k = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < k; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Expert-correction setting.

struct ExpertSettingData {
  Vector y;
  Design forecasts;
  std::vector<std::string> names;
};

/// Synthetic forecasts of a seasonal signal: expert m reports
/// a_m,t + b_m s_t + u_m,t with a drifting bias a_m,t and AR(1) errors
/// u_m,t, so a time-varying linear correction on (1, f, e_lag) can remove
/// most of its error.
inline ExpertSettingData simulate_expert_setting(std::size_t T, std::size_t M, std::uint64_t seed) {
  require(T >= 2 && M >= 1, "simulate_expert_setting: need T >= 2 and M >= 1");
  Rng sig = Rng::substream(seed, stream_id::state_noise);
  Rng obs = Rng::substream(seed, stream_id::observation_noise);
  ExpertSettingData d;
  const auto n = static_cast<Eigen::Index>(T);
  const auto m = static_cast<Eigen::Index>(M);
  d.y.resize(n);
  d.forecasts.resize(n, m);
  Vector s(n);
  double level = 100.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    level += 0.5 * sig.normal();
    const double tt = static_cast<double>(t);
    s(t) = level + 20.0 * std::sin(2.0 * std::numbers::pi * tt / 24.0) + 10.0 * std::sin(2.0 * std::numbers::pi * tt / 168.0);
    d.y(t) = s(t) + obs.normal();
  }
  for (Eigen::Index k = 0; k < m; ++k) {
    Rng er = Rng::substream(seed, stream_id::expert_base + static_cast<std::uint64_t>(k));
    double a = -5.0 + 10.0 * er.uniform();
    const double b = 0.9 + 0.2 * er.uniform();
    const double phi = 0.8 + 0.15 * er.uniform();
    const double sd = 1.0 + er.uniform();
    double u = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
      a += 0.2 * er.normal();
      u = phi * u + sd * er.normal();
      d.forecasts(t, k) = a + b * s(t) + u;
    }
    d.names.push_back("E" + std::to_string(k + 1));
  }
  return d;
}

inline ExpertSettingData load_expert_setting(const ExpertSettingConfig& x) {
  const Table tab = read_csv(x.data_csv);
  require(tab.rows() >= 2, "load_expert_setting: need at least two rows");
  ExpertSettingData d;
  d.y = tab.numeric(x.target);
  d.names = x.forecasts;
  if (d.names.empty()) {
    for (const auto& h : tab.header)
      if (h != x.target && h != "t") d.names.push_back(h);
  }
  require(!d.names.empty(), "load_expert_setting: no forecast columns");
  d.forecasts.resize(d.y.size(), static_cast<Eigen::Index>(d.names.size()));
  for (std::size_t j = 0; j < d.names.size(); ++j) d.forecasts.col(static_cast<Eigen::Index>(j)) = tab.numeric(d.names[j]);
  return d;
}

/// AR(1) residual correction fitted by least squares on the first n rows:
/// e_t = c + phi e_{t-1} + noise, corrected forecast f_t + c + phi e_{t-1}.
inline Matrix ar1_corrected(const Design& forecasts, const Vector& y, Eigen::Index n) {
  require(n >= 3, "ar1_corrected: need at least three training rows");
  const auto T = forecasts.rows();
  Matrix out(T, forecasts.cols());
  for (Eigen::Index m = 0; m < forecasts.cols(); ++m) {
    const Vector e = y - forecasts.col(m);
    Matrix A(n - 1, 2);
    A.col(0).setOnes();
    A.col(1) = e.head(n - 1);
    const Vector coef = A.colPivHouseholderQr().solve(e.segment(1, n - 1));
    out(0, m) = forecasts(0, m);
    for (Eigen::Index t = 1; t < T; ++t) out(t, m) = forecasts(t, m) + coef(0) + coef(1) * e(t - 1);
  }
  return out;
}

struct ExpertSettingResult {
  /// Kalman-corrected experts aggregated by every configured rule.
  Experiment kalman;
  /// AR(1)-corrected experts aggregated by the configured baselines only.
  Experiment ar1;
  /// Uncorrected experts aggregated by the configured baselines only.
  Experiment raw;
  std::vector<StateSpaceModel> fitted;
  std::size_t split = 0;
};

/// Trace of fixed external forecasts; risks use the training-period residual variance.
inline ExpertTrace forecast_trace(const Matrix& f, const Vector& y, const std::vector<std::string>& names,
                                  std::size_t split) {
  ExpertTrace tr;
  tr.y_hat = f;
  tr.xpx = Matrix::Zero(f.rows(), f.cols());
  tr.sigma2.resize(f.rows(), f.cols());
  for (Eigen::Index m = 0; m < f.cols(); ++m) tr.sigma2.col(m).setConstant(estimate_sigma2(y, f.col(m), split));
  tr.names = names;
  return tr;
}

/// Fits each correction model by EM on the first split of the data, filters
/// the whole series with the fitted parameters and aggregates over the rest.
inline ExpertSettingResult run_expert_setting(const ExperimentConfig& c, const ExpertSettingData& d, std::uint64_t seed,
                                              unsigned threads = 1) {
  const auto T = d.y.size();
  const auto split = static_cast<std::size_t>(std::floor(c.expert_setting.split_fraction * static_cast<double>(T)));
  require(split >= 6 && split < static_cast<std::size_t>(T), "run_expert_setting: split leaves an empty part");
  const Design X = expert_setting_design(d.forecasts, d.y);
  ExpertBank bank = build_expert_setting_bank(d.names, c.bank.expert_template);
  ExpertSettingResult res;
  res.split = split;
  std::vector<std::optional<StateSpaceModel>> fitted(static_cast<std::size_t>(bank.size()));
  EmOptions em;
  em.n_iter = c.expert_setting.em_iterations;
  em.tol = c.experts.em_tol;
  const auto n = static_cast<Eigen::Index>(split);
  parallel_for(static_cast<std::size_t>(bank.size()), threads, [&](std::size_t m) {
    const Expert& e = bank[static_cast<Eigen::Index>(m)];
    const Design Xm = detail::expert_design(e, X);
    fitted[m] = em_fit(Xm.topRows(n), d.y.head(n), e.model, em).model;
  });
  for (Eigen::Index m = 0; m < bank.size(); ++m) {
    res.fitted.push_back(*fitted[static_cast<std::size_t>(m)]);
    bank[m].model = res.fitted.back();
  }
  ExpertRunOptions run;
  run.threads = threads;
  AggregationOptions agg;
  agg.burn_in = split;
  agg.risk = parse_risk(c.aggregation.risk);
  require(agg.risk != RiskSource::Exact, "run_expert_setting: exact risks need a simulation truth");
  res.kalman = aggregate_configured(run_experts(bank, X, d.y, run), d.y, c.aggregation.rules, agg, seed);

  std::vector<RuleConfig> baselines;
  for (const auto& r : c.aggregation.rules)
    if (is_baseline(r.spec.rule)) baselines.push_back(r);
  if (baselines.empty()) {
    RuleConfig rc;
    rc.spec.rule = Rule::Boa;
    baselines.push_back(rc);
  }
  res.raw = aggregate_configured(forecast_trace(d.forecasts, d.y, d.names, split), d.y, baselines, agg, seed);
  const Matrix corr = ar1_corrected(d.forecasts, d.y, n);
  res.ar1 = aggregate_configured(forecast_trace(corr, d.y, d.names, split), d.y, baselines, agg, seed);
  return res;
}

}  // namespace kao
