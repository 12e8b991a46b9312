#include "kao/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace kao {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "kao_config_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string message_of(const Json& j) {
  try {
    from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(ConfigTest, DefaultsValidate) {
  const auto c = default_config();
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(c.bank.size, 28U);
  EXPECT_EQ(c.experts.window, 500U);
  EXPECT_EQ(c.aggregation.rules.size(), 9U);
}

TEST(ConfigTest, JsonRoundTripIsExact) {
  auto c = default_config();
  c.seed = 77;
  c.simulation.horizon = 1234;
  c.aggregation.rules[0].spec.eta = 0.125;
  c.aggregation.rules[1].spec.prior = Vector::Constant(28, 1.0 / 28.0);
  const auto back = from_json(to_json(c));
  EXPECT_EQ(canonical_dump(back), canonical_dump(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(ConfigTest, FileRoundTripKeepsHash) {
  auto c = default_config();
  c.simulation.sigma = 0.1 + 0.2;  // not exactly representable in short decimal form
  const auto p = temp_path("round_trip.json");
  save_config(c, p);
  const auto back = load_config(p);
  EXPECT_EQ(back.simulation.sigma, c.simulation.sigma);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(ConfigTest, HashIgnoresOutputDirAndThreadsOnly) {
  auto a = default_config();
  auto b = a;
  b.output_dir = "elsewhere";
  b.threads = 8;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed += 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16U);
}

TEST(ConfigTest, MissingSchemaVersionRejected) {
  Json j = to_json(default_config());
  j.erase("schema_version");
  EXPECT_THROW(from_json(j), ConfigError);
  j["schema_version"] = 99;
  EXPECT_THROW(from_json(j), ConfigError);
}

TEST(ConfigTest, UnknownKeysRejected) {
  Json j = to_json(default_config());
  j["unexpected"] = 1;
  EXPECT_NE(message_of(j).find("unexpected"), std::string::npos);
  Json k = to_json(default_config());
  k["simulation"]["horizn"] = 10;
  EXPECT_NE(message_of(k).find("horizn"), std::string::npos);
}

TEST(ConfigTest, PartialConfigUsesDefaults) {
  const Json j = {{"schema_version", 1}, {"seed", 5}};
  const auto c = from_json(j);
  EXPECT_EQ(c.seed, 5U);
  EXPECT_EQ(c.simulation.horizon, 3000U);
  EXPECT_EQ(c.aggregation.rules.size(), default_rules().size());
}

TEST(ConfigTest, InvalidRuleListsValidRules) {
  Json j = {{"schema_version", 1}, {"aggregation", {{"rules", Json::array({{{"rule", "NOPE"}}})}}}};
  const auto msg = message_of(j);
  EXPECT_NE(msg.find("NOPE"), std::string::npos);
  EXPECT_NE(msg.find(valid_rule_names()), std::string::npos);
}

TEST(ConfigTest, ValidationErrors) {
  auto bad = [](auto mutate) {
    auto c = default_config();
    mutate(c);
    EXPECT_THROW(validate(c), ConfigError);
  };
  bad([](ExperimentConfig& c) { c.mode = "other"; });
  bad([](ExperimentConfig& c) { c.simulation.transforms.pop_back(); });
  bad([](ExperimentConfig& c) { c.simulation.transforms[0] = "log"; });
  bad([](ExperimentConfig& c) { c.simulation.true_subset = {9}; });
  bad([](ExperimentConfig& c) { c.simulation.sigma = 0.0; });
  bad([](ExperimentConfig& c) { c.aggregation.warmup = c.aggregation.burn_in; });
  bad([](ExperimentConfig& c) { c.aggregation.burn_in = c.simulation.horizon; });
  bad([](ExperimentConfig& c) { c.aggregation.rules.push_back(c.aggregation.rules[0]); });
  bad([](ExperimentConfig& c) { c.aggregation.rules.clear(); });
  bad([](ExperimentConfig& c) { c.aggregation.risk = "guess"; });
  bad([](ExperimentConfig& c) { c.experts.refit = "sometimes"; });
  bad([](ExperimentConfig& c) { c.expert_setting.split_fraction = 1.0; });
}

TEST(ConfigTest, RuleLabels) {
  RuleSpec s;
  s.rule = Rule::Boa;
  EXPECT_EQ(rule_label(s), "BOA");
  s.gradient_trick = true;
  EXPECT_EQ(rule_label(s), "BOA-GT");
  s.rule = Rule::KaoGrad;
  EXPECT_EQ(rule_label(s), "KAO-GRAD");
}

}  // namespace
}  // namespace kao
