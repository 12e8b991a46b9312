#pragma once

// Run directories: config.json, steps.csv, summary.json and one
// sub-directory per rule with steps.csv and weights.csv.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kao/config.hpp"
#include "kao/csv.hpp"
#include "kao/experiment.hpp"

namespace kao {

namespace fs = std::filesystem;

inline Json to_json_array(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Json summary_json(const Experiment& ex, const std::string& hash) {
  const auto& rec = ex.record;
  const auto& m = ex.metrics;
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = rec.seed;
  j["config_hash"] = hash;
  j["horizon"] = rec.horizon();
  j["warmup"] = rec.warmup;
  j["burn_in"] = rec.burn_in;
  j["eval_start"] = m.eval_start;
  j["eval_length"] = m.eval_length;
  j["refits"] = rec.trace.refits;
  j["refit_failures"] = rec.trace.refit_failures;
  j["experts"] = Json::array();
  for (Eigen::Index i = 0; i < m.expert_mse.size(); ++i) {
    Json e{{"id", i}, {"name", ex.expert_names[static_cast<std::size_t>(i)]}, {"mse", m.expert_mse(i)}};
    if (m.expert_cum_risk) e["cum_exact_risk"] = (*m.expert_cum_risk)(i);
    j["experts"].push_back(e);
  }
  j["best_expert"] = {{"id", m.best_expert},
                      {"name", ex.expert_names[static_cast<std::size_t>(m.best_expert)]},
                      {"mse", m.best_expert_mse}};
  j["uniform_mse"] = m.uniform_mse;
  j["best_convex"] = {{"mse", m.best_convex.mse},
                      {"pi", to_json_array(m.best_convex.pi)},
                      {"stationarity", m.best_convex.stationarity}};
  j["rules"] = Json::array();
  for (std::size_t r = 0; r < m.rules.size(); ++r) {
    const auto& rm = m.rules[r];
    const auto& oc = ex.outcomes[r];
    Json e;
    e["rule"] = rm.rule;
    e["mse"] = rm.mse;
    e["relative_rmse"] = rm.relative_rmse;
    e["rate_violations"] = rm.rate_violations;
    e["eta_source"] = oc.eta_source;
    e["eta"] = oc.run.spec.eta;
    e["gradient_trick"] = oc.run.spec.gradient_trick;
    if (!oc.grid_mse.empty()) {
      e["eta_grid"] = Json::array();
      for (const auto& [eta, v] : oc.grid_mse) e["eta_grid"].push_back({{"eta", eta}, {"mse", v}});
    }
    if (rm.regret_selection) e["regret_selection"] = to_json_array(*rm.regret_selection);
    if (rm.regret_aggregation) e["regret_aggregation"] = *rm.regret_aggregation;
    j["rules"].push_back(e);
  }
  return j;
}

inline void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

/// Writes the shared expert trace, one directory per rule and summary.json.
inline void write_experiment(const fs::path& dir, const Experiment& ex, const ExperimentConfig& cfg) {
  ensure_dir(dir);
  const auto& rec = ex.record;
  const auto T = rec.horizon();
  const auto M = rec.trace.size();
  save_config(cfg, dir / "config.json");

  std::vector<std::string> head{"t", "y"};
  if (rec.truth) head.push_back("mu");
  for (Eigen::Index m = 0; m < M; ++m) head.push_back("yhat_" + std::to_string(m));
  for (Eigen::Index m = 0; m < M; ++m) head.push_back("risk_" + std::to_string(m));
  {
    CsvWriter w(dir / "steps.csv", head);
    std::vector<std::string> row;
    for (Eigen::Index t = 0; t < T; ++t) {
      row.assign({std::to_string(t + 1), format_double(rec.y(t))});
      if (rec.truth) row.push_back(format_double(rec.truth->mu(t)));
      for (Eigen::Index m = 0; m < M; ++m) row.push_back(format_double(rec.trace.y_hat(t, m)));
      for (Eigen::Index m = 0; m < M; ++m) row.push_back(format_double(rec.risk(t, m)));
      w.row(row);
    }
    w.close();
  }
  for (std::size_t r = 0; r < rec.rules.size(); ++r) {
    const auto& rr = rec.rules[r];
    const std::string& label = ex.outcomes[r].label;
    const fs::path rd = dir / label;
    ensure_dir(rd);
    CsvWriter w(rd / "steps.csv", {"t", "y", "y_agg", "sq_loss"});
    for (Eigen::Index t = 0; t < T; ++t) {
      const double e = rr.y_agg(t) - rec.y(t);
      w.row({std::to_string(t + 1), format_double(rec.y(t)), format_double(rr.y_agg(t)), format_double(e * e)});
    }
    w.close();
    if (cfg.write_weights) {
      CsvWriter ww(rd / "weights.csv", {"t", "rule", "expert_id", "rho", "eta", "pseudo_loss"});
      for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index m = 0; m < M; ++m) {
          ww.row({std::to_string(t + 1), label, std::to_string(m), format_double(rr.rho(t, m)),
                  format_double(rr.eta(t, m)), format_double(rr.pseudo(t, m))});
        }
      }
      ww.close();
    }
  }
  write_json(dir / "summary.json", summary_json(ex, config_hash(cfg)));
}

// ---------------------------------------------------------------------------
// Reading run directories back (plot data).

struct RuleSeries {
  std::string label;
  Vector y;
  Vector y_agg;
  Vector sq_loss;
};

struct RunDirectory {
  fs::path path;
  Json summary;
  std::optional<Vector> mu;
  std::vector<RuleSeries> rules;

  [[nodiscard]] std::size_t eval_start() const { return summary.at("eval_start").get<std::size_t>(); }
};

/// True when `dir` holds a run (summary.json present).
inline bool is_run_directory(const fs::path& dir) { return fs::is_regular_file(dir / "summary.json"); }

/// Expands each input into run directories: a run itself, or every
/// sub-directory that is a run (replication batches, expert-setting runs).
inline std::vector<fs::path> expand_run_directories(const std::vector<fs::path>& inputs) {
  require(!inputs.empty(), "no run directories given");
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (!fs::is_directory(in)) throw IoError("missing run directory '" + in.string() + "'");
    if (is_run_directory(in)) {
      out.push_back(in);
      continue;
    }
    std::vector<fs::path> subs;
    for (const auto& e : fs::directory_iterator(in))
      if (e.is_directory() && is_run_directory(e.path())) subs.push_back(e.path());
    if (subs.empty()) throw IoError("'" + in.string() + "' contains no run (summary.json not found)");
    std::sort(subs.begin(), subs.end());
    out.insert(out.end(), subs.begin(), subs.end());
  }
  return out;
}

inline RunDirectory read_run_directory(const fs::path& dir) {
  if (!is_run_directory(dir)) throw IoError("missing run directory '" + dir.string() + "'");
  RunDirectory rd;
  rd.path = dir;
  rd.summary = read_json(dir / "summary.json");
  const Table steps = read_csv(dir / "steps.csv");
  if (steps.has("mu")) rd.mu = steps.numeric("mu");
  for (const auto& r : rd.summary.at("rules")) {
    const auto label = r.at("rule").get<std::string>();
    const Table t = read_csv(dir / label / "steps.csv");
    rd.rules.push_back({label, t.numeric("y"), t.numeric("y_agg"), t.numeric("sq_loss")});
  }
  return rd;
}

/// Names runs by their directory, prefixed by the parent when names repeat.
inline std::vector<std::string> run_names(const std::vector<fs::path>& dirs) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  bool clash = false;
  for (const auto& d : dirs) {
    const auto n = d.filename().string();
    clash |= !seen.insert(n).second;
    out.push_back(n);
  }
  if (clash) {
    for (std::size_t i = 0; i < dirs.size(); ++i) out[i] = dirs[i].parent_path().filename().string() + "/" + out[i];
  }
  return out;
}

/// Emits the plot-ready CSV set for the given run directories:
///   cumulative_error.csv  [run,] t, rule, cum_sq_error   (evaluation period)
///   prediction.csv        [run,] t, rule, y, [mu,] y_agg
///   mse_by_replication.csv  run, rule, mse
///   weights.csv           [run,] t, rule, expert_id, rho, eta, pseudo_loss
/// The run column appears only when there is more than one run.
inline std::vector<fs::path> write_plot_data(const std::vector<fs::path>& inputs, const fs::path& out_dir) {
  const auto dirs = expand_run_directories(inputs);
  const auto names = run_names(dirs);
  const bool multi = dirs.size() > 1;
  ensure_dir(out_dir);
  auto with_run = [&](std::vector<std::string> cols) {
    if (multi) cols.insert(cols.begin(), "run");
    return cols;
  };
  std::vector<fs::path> written{out_dir / "cumulative_error.csv", out_dir / "prediction.csv",
                                out_dir / "mse_by_replication.csv", out_dir / "weights.csv"};
  CsvWriter cum(written[0], with_run({"t", "rule", "cum_sq_error"}));
  bool any_mu = false;
  std::vector<RunDirectory> runs;
  for (const auto& d : dirs) {
    runs.push_back(read_run_directory(d));
    any_mu |= runs.back().mu.has_value();
  }
  CsvWriter pred(written[1], any_mu ? with_run({"t", "rule", "y", "mu", "y_agg"}) : with_run({"t", "rule", "y", "y_agg"}));
  CsvWriter mse(written[2], {"run", "rule", "mse"});
  CsvWriter wts(written[3], with_run({"t", "rule", "expert_id", "rho", "eta", "pseudo_loss"}));
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& rd = runs[i];
    auto prefix = [&](std::vector<std::string> cells) {
      if (multi) cells.insert(cells.begin(), names[i]);
      return cells;
    };
    const auto start = static_cast<Eigen::Index>(rd.eval_start());
    for (const auto& rs : rd.rules) {
      double acc = 0.0;
      for (Eigen::Index t = start; t < rs.sq_loss.size(); ++t) {
        acc += rs.sq_loss(t);
        cum.row(prefix({std::to_string(t + 1), rs.label, format_double(acc)}));
      }
      for (Eigen::Index t = 0; t < rs.y.size(); ++t) {
        std::vector<std::string> cells{std::to_string(t + 1), rs.label, format_double(rs.y(t))};
        if (any_mu) cells.push_back(rd.mu ? format_double((*rd.mu)(t)) : "");
        cells.push_back(format_double(rs.y_agg(t)));
        pred.row(prefix(cells));
      }
      const fs::path wpath = rd.path / rs.label / "weights.csv";
      if (fs::is_regular_file(wpath)) {
        const Table w = read_csv(wpath);
        for (std::size_t r = 0; r < w.rows(); ++r) wts.row(prefix(w.text[r]));
      }
    }
    for (const auto& r : rd.summary.at("rules")) {
      mse.row({names[i], r.at("rule").get<std::string>(), format_double(r.at("mse").get<double>())});
    }
  }
  cum.close();
  pred.close();
  mse.close();
  wts.close();
  return written;
}

}  // namespace kao
