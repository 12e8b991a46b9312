// kao: command-line front end for simulation, aggregation runs, plot data
// and EM fitting.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kao/kao.hpp"

namespace fs = std::filesystem;
using namespace kao;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<unsigned> threads;
};

/// Timestamped log; the only output that is allowed to differ between reruns.
class RunLog {
 public:
  explicit RunLog(const fs::path& dir) : out_(dir / "run.log", std::ios::app) {}
  void line(const std::string& msg) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    out_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << msg << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

ExperimentConfig effective_config(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? default_config() : load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.output_dir = g.out;
  if (g.threads) c.threads = *g.threads;
  validate(c);
  return c;
}

void apply_rule_override(ExperimentConfig& c, const std::vector<std::string>& names) {
  if (names.empty()) return;
  std::vector<RuleConfig> rules;
  for (const auto& raw : names) {
    std::string name = raw;
    bool gt = false;
    if (name.size() > 3 && name.substr(name.size() - 3) == "-GT") {
      gt = true;
      name.resize(name.size() - 3);
    }
    const auto r = parse_rule(name);
    if (!r || (gt && !is_baseline(*r))) {
      throw UsageError("invalid rule '" + raw + "'; valid rules: " + valid_rule_names() +
                       " (baselines also accept a -GT suffix)");
    }
    RuleConfig rc;
    // Keep the configured parameters of a matching rule when present.
    for (const auto& existing : c.aggregation.rules)
      if (existing.spec.rule == *r && existing.spec.gradient_trick == gt) rc = existing;
    rc.spec.rule = *r;
    rc.spec.gradient_trick = gt;
    rules.push_back(rc);
  }
  c.aggregation.rules = rules;
  validate(c);
}

std::string rep_name(std::size_t r) {
  std::ostringstream s;
  s << "rep_" << std::setw(3) << std::setfill('0') << r;
  return s.str();
}

fs::path replication_dir(const ExperimentConfig& c, std::size_t r) {
  const fs::path base(c.output_dir);
  return c.simulation.replications == 1 ? base : base / rep_name(r);
}

// ---------------------------------------------------------------------------
// simulate

void write_study_stream(const fs::path& dir, const StudyData& d) {
  ensure_dir(dir);
  std::vector<std::string> head{"t", "y"};
  head.insert(head.end(), d.covariate_names.begin(), d.covariate_names.end());
  CsvWriter w(dir / "stream.csv", head);
  for (Eigen::Index t = 0; t < d.y.size(); ++t) {
    std::vector<std::string> row{std::to_string(t + 1), format_double(d.y(t))};
    for (Eigen::Index j = 0; j < d.X.cols(); ++j) row.push_back(format_double(d.X(t, j)));
    w.row(row);
  }
  w.close();
  std::vector<std::string> th{"t", "mu"};
  for (Eigen::Index i = 0; i < d.model.dim(); ++i) th.push_back("theta_" + std::to_string(i + 1));
  CsvWriter tw(dir / "truth.csv", th);
  for (Eigen::Index t = 0; t < d.y.size(); ++t) {
    std::vector<std::string> row{std::to_string(t + 1), format_double(d.truth.mu(t))};
    const Vector& theta = d.theta_path[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < theta.size(); ++i) row.push_back(format_double(theta(i)));
    tw.row(row);
  }
  tw.close();
}

void write_expert_data(const fs::path& dir, const ExpertSettingData& d) {
  ensure_dir(dir);
  std::vector<std::string> head{"t", "y"};
  head.insert(head.end(), d.names.begin(), d.names.end());
  CsvWriter w(dir / "data.csv", head);
  for (Eigen::Index t = 0; t < d.y.size(); ++t) {
    std::vector<std::string> row{std::to_string(t + 1), format_double(d.y(t))};
    for (Eigen::Index m = 0; m < d.forecasts.cols(); ++m) row.push_back(format_double(d.forecasts(t, m)));
    w.row(row);
  }
  w.close();
}

int cmd_simulate(const Globals& g) {
  const ExperimentConfig c = effective_config(g);
  const fs::path base(c.output_dir);
  ensure_dir(base);
  save_config(c, base / "config.json");
  RunLog log(base);
  log.line("simulate: mode=" + c.mode + " seed=" + std::to_string(c.seed) + " config_hash=" + config_hash(c));
  if (c.mode == "expert_setting") {
    write_expert_data(base, simulate_expert_setting(c.simulation.horizon, c.expert_setting.n_experts, c.seed));
    std::cout << (base / "data.csv").string() << '\n';
    return 0;
  }
  parallel_for(c.simulation.replications, c.threads, [&](std::size_t r) {
    write_study_stream(replication_dir(c, r), simulate_study(c.simulation, replication_seed(c.seed, r)));
  });
  log.line("simulate: wrote " + std::to_string(c.simulation.replications) + " stream(s)");
  std::cout << base.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  std::string stream;
  std::string truth;
  std::vector<std::string> rules;
};

void log_experiment(RunLog& log, const std::string& tag, const Experiment& ex) {
  for (const auto& l : ex.record.trace.log) log.line(tag + l);
  for (const auto& r : ex.metrics.rules) {
    std::ostringstream s;
    s << tag << r.rule << " mse=" << format_double(r.mse);
    if (r.rate_violations) s << " rate_violations=" << r.rate_violations;
    log.line(s.str());
  }
}

void run_expert_mode(const ExperimentConfig& c, const RunOptions& o, RunLog& log) {
  ExpertSettingConfig x = c.expert_setting;
  if (!o.stream.empty()) x.data_csv = o.stream;
  const ExpertSettingData d =
      x.data_csv.empty() ? simulate_expert_setting(c.simulation.horizon, x.n_experts, c.seed) : load_expert_setting(x);
  const ExpertSettingResult res = run_expert_setting(c, d, c.seed, c.threads);
  const fs::path base(c.output_dir);
  write_experiment(base / "kalman", res.kalman, c);
  write_experiment(base / "raw", res.raw, c);
  write_experiment(base / "ar1", res.ar1, c);
  // Every RMSE relative to the best convex combination of the Kalman-corrected experts.
  const double ref = res.kalman.metrics.best_convex.mse;
  Json table;
  table["split"] = res.split;
  table["reference_best_convex_mse"] = ref;
  for (const auto& [name, ex] : {std::pair<std::string, const Experiment*>{"kalman", &res.kalman},
                                 {"raw", &res.raw}, {"ar1", &res.ar1}}) {
    Json e;
    e["best_convex"] = std::sqrt(ex->metrics.best_convex.mse / ref);
    e["uniform"] = std::sqrt(ex->metrics.uniform_mse / ref);
    e["best_expert"] = std::sqrt(ex->metrics.best_expert_mse / ref);
    for (const auto& r : ex->metrics.rules) e[r.rule] = std::sqrt(r.mse / ref);
    table["relative_rmse"][name] = e;
  }
  table["fitted"] = Json::array();
  for (std::size_t m = 0; m < res.fitted.size(); ++m) {
    const auto& fm = res.fitted[m];
    std::vector<double> qd(fm.Q().diagonal().data(), fm.Q().diagonal().data() + fm.dim());
    table["fitted"].push_back({{"expert", d.names[m]}, {"sigma2", fm.sigma2()}, {"Q_diagonal", qd}});
  }
  write_json(base / "comparison.json", table);
  log_experiment(log, "kalman: ", res.kalman);
  log_experiment(log, "raw: ", res.raw);
  log_experiment(log, "ar1: ", res.ar1);
}

Experiment run_stream_file(const ExperimentConfig& c, const RunOptions& o) {
  const auto names = transformed_names(c.simulation);
  const Table tab = read_csv(o.stream);
  const Vector y = tab.numeric("y");
  Design X(y.size(), static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) X.col(static_cast<Eigen::Index>(j)) = tab.numeric(names[j]);
  std::optional<Truth> truth;
  if (!o.truth.empty()) {
    const Table tt = read_csv(o.truth);
    truth = Truth{tt.numeric("mu"), c.simulation.sigma * c.simulation.sigma};
    require_dim(truth->mu.size(), y.size(), "truth file rows");
  }
  if (!truth && parse_risk(c.aggregation.risk) == RiskSource::Exact) {
    throw UsageError("risk 'exact' needs --truth");
  }
  return run_study_on(c, X, y, truth, c.seed, c.threads);
}

int cmd_run(const Globals& g, const RunOptions& o) {
  ExperimentConfig c = effective_config(g);
  apply_rule_override(c, o.rules);
  const fs::path base(c.output_dir);
  ensure_dir(base);
  RunLog log(base);
  log.line("run: mode=" + c.mode + " seed=" + std::to_string(c.seed) + " config_hash=" + config_hash(c));
  if (c.mode == "expert_setting") {
    save_config(c, base / "config.json");
    run_expert_mode(c, o, log);
  } else if (!o.stream.empty()) {
    const Experiment ex = run_stream_file(c, o);
    write_experiment(base, ex, c);
    log_experiment(log, "", ex);
  } else {
    const auto reps = c.simulation.replications;
    if (reps > 1) save_config(c, base / "config.json");
    // With several replications the threads run replications, not experts.
    const unsigned inner = reps > 1 ? 1U : c.threads;
    std::mutex mu;
    parallel_for(reps, reps > 1 ? c.threads : 1U, [&](std::size_t r) {
      const Experiment ex = run_study(c, replication_seed(c.seed, r), inner);
      write_experiment(replication_dir(c, r), ex, c);
      const std::lock_guard<std::mutex> lock(mu);
      log_experiment(log, reps > 1 ? rep_name(r) + ": " : "", ex);
    });
  }
  log.line("run: done");
  std::cout << base.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// plotdata

int cmd_plotdata(const Globals& g, const std::vector<std::string>& dirs) {
  if (dirs.empty()) throw UsageError("plotdata: at least one run directory is required");
  std::vector<fs::path> inputs(dirs.begin(), dirs.end());
  const fs::path out = g.out.empty() ? fs::path("plotdata") : fs::path(g.out);
  for (const auto& p : write_plot_data(inputs, out)) std::cout << p.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// em-fit

struct EmFitOptions {
  std::string data;
  std::string response = "y";
  std::vector<std::string> columns;
  std::optional<std::size_t> iterations;
  bool normalize = false;
  bool estimate_theta0 = false;
};

int cmd_em_fit(const Globals& g, const EmFitOptions& o) {
  const ExperimentConfig c = effective_config(g);
  const Table tab = read_csv(o.data);
  std::vector<std::string> cols = o.columns;
  if (cols.empty()) {
    for (const auto& h : tab.header)
      if (h != o.response && h != "t") cols.push_back(h);
  }
  if (cols.empty()) throw UsageError("em-fit: no covariate columns in '" + o.data + "'");
  const Vector y = tab.numeric(o.response);
  Design X = load_columns(o.data, cols, o.normalize);
  EmOptions em;
  em.n_iter = o.iterations.value_or(c.experts.em_iterations);
  em.tol = c.experts.em_tol;
  em.estimate_theta0 = o.estimate_theta0;
  const auto init = c.bank.expert_template.instantiate(X.cols());
  const EmResult r = em_fit(X, y, init, em);

  const fs::path base = g.out.empty() ? fs::path("em_fit") : fs::path(g.out);
  ensure_dir(base);
  Json j;
  j["columns"] = cols;
  j["response"] = o.response;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["sigma2"] = r.model.sigma2();
  std::vector<std::vector<double>> q;
  for (Eigen::Index i = 0; i < r.model.Q().rows(); ++i) {
    q.emplace_back();
    for (Eigen::Index k = 0; k < r.model.Q().cols(); ++k) q.back().push_back(r.model.Q()(i, k));
  }
  j["Q"] = q;
  j["theta0"] = to_json_array(r.model.theta0());
  j["loglik"] = r.loglik;
  write_json(base / "em_fit.json", j);
  CsvWriter w(base / "em_loglik.csv", {"iteration", "loglik"});
  for (std::size_t k = 0; k < r.loglik.size(); ++k) w.row({std::to_string(k), format_double(r.loglik[k])});
  w.close();
  std::cout << (base / "em_fit.json").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kao: online aggregation of Kalman-filter experts"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "experiment configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed (overrides the configuration)");
  app.add_option("--out", g.out, "output directory (overrides the configuration)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

  auto* sim = app.add_subcommand("simulate", "write simulated streams and their truth");

  RunOptions ro;
  auto* run = app.add_subcommand("run", "run the configured rules and write a run directory");
  run->add_option("--stream", ro.stream, "stream CSV (simulate output or expert data)")->check(CLI::ExistingFile);
  run->add_option("--truth", ro.truth, "truth CSV with a mu column")->check(CLI::ExistingFile);
  run->add_option("--rule", ro.rules, "rule to run (repeatable); replaces the configured list");

  std::vector<std::string> plot_dirs;
  auto* plot = app.add_subcommand("plotdata", "emit plot-ready CSVs from run directories");
  plot->add_option("runs", plot_dirs, "run directories");

  EmFitOptions eo;
  auto* em = app.add_subcommand("em-fit", "fit Q and sigma2 of a random-walk model by EM");
  em->add_option("--data", eo.data, "CSV with a header row")->required()->check(CLI::ExistingFile);
  em->add_option("--response", eo.response, "response column");
  em->add_option("--columns", eo.columns, "covariate columns (default: all but response and t)")->delimiter(',');
  em->add_option("--iterations", eo.iterations, "EM iterations (default: experts.em_iterations)");
  em->add_flag("--normalize", eo.normalize, "min-max scale covariates to [0, 1]");
  em->add_flag("--estimate-theta0", eo.estimate_theta0, "also estimate theta0");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*sim) return cmd_simulate(g);
    if (*run) return cmd_run(g, ro);
    if (*plot) return cmd_plotdata(g, plot_dirs);
    if (*em) return cmd_em_fit(g, eo);
  } catch (const UsageError& e) {
    std::cerr << "kao: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "kao: configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "kao: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
