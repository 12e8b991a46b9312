#pragma once

// Experiment configuration: a versioned JSON document parsed strictly
// (unknown keys and wrong types are errors). Every field has a default, so
// "{}" plus a schema_version is a valid configuration of the synthetic study.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kao/aggregation.hpp"
#include "kao/bank.hpp"
#include "kao/csv.hpp"
#include "kao/harness.hpp"

namespace kao {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Transform { Identity, Square, Cube };

inline std::string to_string(Transform t) {
  switch (t) {
    case Transform::Identity: return "identity";
    case Transform::Square: return "square";
    case Transform::Cube: return "cube";
  }
  return "?";
}

inline Transform parse_transform(const std::string& s) {
  if (s == "identity") return Transform::Identity;
  if (s == "square") return Transform::Square;
  if (s == "cube") return Transform::Cube;
  throw ConfigError("unknown transform '" + s + "' (valid: identity, square, cube)");
}

struct SimulationConfig {
  std::size_t horizon = 3000;
  std::size_t replications = 1;
  std::vector<std::string> covariates{"temperature", "gas", "fuel", "charcoal", "nebulosity"};
  std::vector<std::string> transforms{"square", "cube", "identity", "identity", "identity"};
  /// Optional CSV of raw covariates (columns named as above); generated when empty.
  std::string covariates_csv;
  /// Min-max scale CSV covariates to [0, 1] before the transforms.
  bool normalize = true;
  std::vector<Eigen::Index> true_subset{0, 1};
  /// Transition of the true state; identity when empty.
  std::vector<std::vector<double>> K;
  std::vector<std::vector<double>> Q{{1.0, 0.9}, {0.9, 1.0}};
  double sigma = 1.5;
  double theta0_mean = 500.0;
  double theta0_sd = 1.0;
};

struct BankConfig {
  std::size_t size = 28;
  ExpertTemplate expert_template{1.0, 1.0, 1.0, 0.0, 1e6};
};

struct ExpertsConfig {
  std::size_t window = 500;
  std::string refit = "em";
  std::size_t em_iterations = 10;
  double em_tol = 1e-8;
};

struct RuleConfig {
  RuleSpec spec;
  /// Oracle tuning grid for the rate; used when spec.eta <= 0 and the grid is non-empty.
  std::vector<double> eta_grid;
};

struct AggregationConfig {
  std::vector<RuleConfig> rules;
  /// Leading steps ignored by the rules; the experts' first window by default.
  std::size_t warmup = 500;
  std::size_t burn_in = 600;
  std::string risk = "model";
};

struct ExpertSettingConfig {
  std::string data_csv;
  std::string target = "y";
  std::vector<std::string> forecasts;
  double split_fraction = 0.5;
  std::size_t em_iterations = 50;
  /// Synthetic data generation for `simulate` in this mode.
  std::size_t n_experts = 5;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string mode = "synthetic";
  std::uint64_t seed = 20190101;
  unsigned threads = 1;
  std::string output_dir = "out";
  /// Per-rule weight trajectories (t x M rows each) in run directories.
  bool write_weights = true;
  SimulationConfig simulation;
  BankConfig bank;
  ExpertsConfig experts;
  AggregationConfig aggregation;
  ExpertSettingConfig expert_setting;
};

inline std::vector<double> default_eta_grid() {
  std::vector<double> g;
  for (int k = -16; k <= 2; ++k) g.push_back(std::pow(10.0, k / 2.0));
  return g;
}

inline std::vector<RuleConfig> default_rules() {
  std::vector<RuleConfig> out;
  for (Rule r : kAllRules) {
    RuleConfig rc;
    rc.spec.rule = r;
    // Grid tuning for the fixed-rate KAO rules only; baselines keep their standard rates.
    if (r == Rule::KaoMs || r == Rule::KaoGrad) rc.eta_grid = default_eta_grid();
    out.push_back(rc);
  }
  // Gradient-trick variants of the loss-based baselines.
  for (Rule r : {Rule::Boa, Rule::MlPoly}) {
    RuleConfig rc;
    rc.spec.rule = r;
    rc.spec.gradient_trick = true;
    out.push_back(rc);
  }
  return out;
}

inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.aggregation.rules = default_rules();
  return c;
}

/// Display label of a configured rule; gradient-trick baselines get a "-GT" suffix.
inline std::string rule_label(const RuleSpec& s) {
  std::string out(to_string(s.rule));
  if (s.gradient_trick && is_baseline(s.rule)) out += "-GT";
  return out;
}

inline RiskSource parse_risk(const std::string& s) {
  if (s == "model") return RiskSource::Model;
  if (s == "burn_in") return RiskSource::BurnIn;
  if (s == "exact") return RiskSource::Exact;
  throw ConfigError("unknown risk source '" + s + "' (valid: model, burn_in, exact)");
}

inline Refit parse_refit(const std::string& s) {
  if (s == "none") return Refit::None;
  if (s == "em") return Refit::Em;
  throw ConfigError("unknown refit '" + s + "' (valid: none, em)");
}

// ---------------------------------------------------------------------------
// JSON mapping.

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  [[nodiscard]] const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  [[nodiscard]] std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Json rule_to_json(const RuleConfig& r) {
  Json j;
  j["rule"] = std::string(to_string(r.spec.rule));
  j["eta"] = r.spec.eta;
  j["g_bound"] = r.spec.g_bound;
  j["d_bound"] = r.spec.d_bound;
  j["gradient_trick"] = r.spec.gradient_trick;
  j["prior"] = std::vector<double>(r.spec.prior.data(), r.spec.prior.data() + r.spec.prior.size());
  j["eta_grid"] = r.eta_grid;
  return j;
}

inline RuleConfig rule_from_json(const Json& j, const std::string& path) {
  ObjectReader rd(j, path);
  RuleConfig r;
  std::string name;
  rd.get("rule", name);
  const auto rule = parse_rule(name);
  if (!rule) throw ConfigError(path + ".rule: unknown rule '" + name + "' (valid: " + valid_rule_names() + ")");
  r.spec.rule = *rule;
  rd.get("eta", r.spec.eta);
  rd.get("g_bound", r.spec.g_bound);
  rd.get("d_bound", r.spec.d_bound);
  rd.get("gradient_trick", r.spec.gradient_trick);
  std::vector<double> prior;
  rd.get("prior", prior);
  r.spec.prior = Eigen::Map<const Vector>(prior.data(), static_cast<Eigen::Index>(prior.size()));
  rd.get("eta_grid", r.eta_grid);
  rd.finish();
  for (double e : r.eta_grid) {
    if (!(e > 0.0)) throw ConfigError(path + ".eta_grid: rates must be > 0");
  }
  return r;
}

}  // namespace detail

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["schema_version"] = c.schema_version;
  j["mode"] = c.mode;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["output_dir"] = c.output_dir;
  j["write_weights"] = c.write_weights;
  auto& s = j["simulation"];
  s["horizon"] = c.simulation.horizon;
  s["replications"] = c.simulation.replications;
  s["covariates"] = c.simulation.covariates;
  s["transforms"] = c.simulation.transforms;
  s["covariates_csv"] = c.simulation.covariates_csv;
  s["normalize"] = c.simulation.normalize;
  s["true_subset"] = c.simulation.true_subset;
  s["K"] = c.simulation.K;
  s["Q"] = c.simulation.Q;
  s["sigma"] = c.simulation.sigma;
  s["theta0_mean"] = c.simulation.theta0_mean;
  s["theta0_sd"] = c.simulation.theta0_sd;
  auto& b = j["bank"];
  b["size"] = c.bank.size;
  const auto& t = c.bank.expert_template;
  b["template"] = {{"k", t.k}, {"q", t.q}, {"sigma2", t.sigma2}, {"theta0", t.theta0}, {"p0", t.p0}};
  auto& e = j["experts"];
  e["window"] = c.experts.window;
  e["refit"] = c.experts.refit;
  e["em_iterations"] = c.experts.em_iterations;
  e["em_tol"] = c.experts.em_tol;
  auto& a = j["aggregation"];
  a["warmup"] = c.aggregation.warmup;
  a["burn_in"] = c.aggregation.burn_in;
  a["risk"] = c.aggregation.risk;
  a["rules"] = Json::array();
  for (const auto& r : c.aggregation.rules) a["rules"].push_back(detail::rule_to_json(r));
  auto& x = j["expert_setting"];
  x["data_csv"] = c.expert_setting.data_csv;
  x["target"] = c.expert_setting.target;
  x["forecasts"] = c.expert_setting.forecasts;
  x["split_fraction"] = c.expert_setting.split_fraction;
  x["em_iterations"] = c.expert_setting.em_iterations;
  x["n_experts"] = c.expert_setting.n_experts;
  return j;
}

inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.schema_version != kSchemaVersion) {
    fail("schema_version: expected " + std::to_string(kSchemaVersion) + ", got " + std::to_string(c.schema_version));
  }
  if (c.mode != "synthetic" && c.mode != "expert_setting") fail("mode: expected 'synthetic' or 'expert_setting'");
  if (c.threads < 1) fail("threads: must be >= 1");
  const auto& s = c.simulation;
  if (s.horizon < 2) fail("simulation.horizon: must be >= 2");
  if (s.replications < 1) fail("simulation.replications: must be >= 1");
  if (s.covariates.empty()) fail("simulation.covariates: must be non-empty");
  if (s.transforms.size() != s.covariates.size()) fail("simulation.transforms: one entry per covariate");
  for (const auto& t : s.transforms) parse_transform(t);
  if (s.true_subset.empty()) fail("simulation.true_subset: must be non-empty");
  for (auto i : s.true_subset) {
    if (i < 0 || i >= static_cast<Eigen::Index>(s.covariates.size())) fail("simulation.true_subset: index out of range");
  }
  const auto d = s.true_subset.size();
  if (s.Q.size() != d) fail("simulation.Q: must be |true_subset| x |true_subset|");
  for (const auto& row : s.Q)
    if (row.size() != d) fail("simulation.Q: must be square");
  if (!s.K.empty()) {
    if (s.K.size() != d) fail("simulation.K: must be |true_subset| x |true_subset|");
    for (const auto& row : s.K)
      if (row.size() != d) fail("simulation.K: must be square");
  }
  if (!(s.sigma > 0.0)) fail("simulation.sigma: must be > 0");
  if (!(s.theta0_sd >= 0.0)) fail("simulation.theta0_sd: must be >= 0");
  if (c.bank.size < 1) fail("bank.size: must be >= 1");
  const auto& t = c.bank.expert_template;
  if (!(t.sigma2 > 0.0) || !(t.q >= 0.0) || !(t.p0 >= 0.0)) fail("bank.template: need sigma2 > 0, q >= 0, p0 >= 0");
  parse_refit(c.experts.refit);
  if (c.experts.em_iterations < 1) fail("experts.em_iterations: must be >= 1");
  parse_risk(c.aggregation.risk);
  const auto& a = c.aggregation;
  if (!(a.warmup < a.burn_in || (a.warmup == 0 && a.burn_in == 0))) fail("aggregation: need warmup < burn_in");
  if (c.mode == "synthetic" && a.burn_in >= s.horizon) fail("aggregation.burn_in: must be < simulation.horizon");
  if (c.aggregation.rules.empty()) fail("aggregation.rules: at least one rule required");
  std::set<std::string> labels;
  for (const auto& r : c.aggregation.rules) {
    if (!labels.insert(rule_label(r.spec)).second) fail("aggregation.rules: duplicate rule " + rule_label(r.spec));
  }
  const auto& x = c.expert_setting;
  if (!(x.split_fraction > 0.0 && x.split_fraction < 1.0)) fail("expert_setting.split_fraction: must lie in (0, 1)");
  if (x.em_iterations < 1) fail("expert_setting.em_iterations: must be >= 1");
  if (x.n_experts < 1) fail("expert_setting.n_experts: must be >= 1");
}

inline ExperimentConfig from_json(const Json& j) {
  using detail::ObjectReader;
  ExperimentConfig c = default_config();
  ObjectReader root(j, "config");
  root.get("schema_version", c.schema_version);
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  root.get("mode", c.mode);
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  root.get("output_dir", c.output_dir);
  root.get("write_weights", c.write_weights);
  if (const Json* s = root.child("simulation")) {
    ObjectReader rd(*s, "simulation");
    auto& o = c.simulation;
    rd.get("horizon", o.horizon);
    rd.get("replications", o.replications);
    rd.get("covariates", o.covariates);
    rd.get("transforms", o.transforms);
    rd.get("covariates_csv", o.covariates_csv);
    rd.get("normalize", o.normalize);
    rd.get("true_subset", o.true_subset);
    rd.get("K", o.K);
    rd.get("Q", o.Q);
    rd.get("sigma", o.sigma);
    rd.get("theta0_mean", o.theta0_mean);
    rd.get("theta0_sd", o.theta0_sd);
    rd.finish();
  }
  if (const Json* b = root.child("bank")) {
    ObjectReader rd(*b, "bank");
    rd.get("size", c.bank.size);
    if (const Json* t = rd.child("template")) {
      ObjectReader tr(*t, "bank.template");
      auto& o = c.bank.expert_template;
      tr.get("k", o.k);
      tr.get("q", o.q);
      tr.get("sigma2", o.sigma2);
      tr.get("theta0", o.theta0);
      tr.get("p0", o.p0);
      tr.finish();
    }
    rd.finish();
  }
  if (const Json* e = root.child("experts")) {
    ObjectReader rd(*e, "experts");
    rd.get("window", c.experts.window);
    rd.get("refit", c.experts.refit);
    rd.get("em_iterations", c.experts.em_iterations);
    rd.get("em_tol", c.experts.em_tol);
    rd.finish();
  }
  if (const Json* a = root.child("aggregation")) {
    ObjectReader rd(*a, "aggregation");
    rd.get("warmup", c.aggregation.warmup);
    rd.get("burn_in", c.aggregation.burn_in);
    rd.get("risk", c.aggregation.risk);
    if (const Json* rules = rd.child("rules")) {
      if (!rules->is_array()) throw ConfigError("aggregation.rules: expected an array");
      c.aggregation.rules.clear();
      for (std::size_t i = 0; i < rules->size(); ++i) {
        c.aggregation.rules.push_back(
            detail::rule_from_json((*rules)[i], "aggregation.rules[" + std::to_string(i) + "]"));
      }
    }
    rd.finish();
  }
  if (const Json* x = root.child("expert_setting")) {
    ObjectReader rd(*x, "expert_setting");
    auto& o = c.expert_setting;
    rd.get("data_csv", o.data_csv);
    rd.get("target", o.target);
    rd.get("forecasts", o.forecasts);
    rd.get("split_fraction", o.split_fraction);
    rd.get("em_iterations", o.em_iterations);
    rd.get("n_experts", o.n_experts);
    rd.finish();
  }
  root.finish();
  validate(c);
  return c;
}

inline std::string canonical_dump(const ExperimentConfig& c) { return to_json(c).dump(2); }

/// FNV-1a 64 of the canonical JSON text, as 16 hex digits. output_dir and
/// threads are left out: they do not change any result.
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  j.erase("threads");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return from_json(j);
}

inline void save_config(const ExperimentConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << canonical_dump(c) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace kao
