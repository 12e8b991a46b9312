#include "kao/record_io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

namespace kao {
namespace {

ExperimentConfig small_config() {
  auto c = default_config();
  c.simulation.horizon = 200;
  c.bank.size = 4;
  c.experts.window = 80;
  c.experts.em_iterations = 2;
  c.aggregation.warmup = 80;
  c.aggregation.burn_in = 100;
  c.aggregation.rules.resize(2);  // KAO-MS, KAO-GRAD
  for (auto& r : c.aggregation.rules) r.eta_grid = {1e-3, 1e-1};
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "kao_record_io_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

TEST(FormatTest, SeventeenDigitsRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, std::nextafter(1.0, 2.0)}) {
    EXPECT_EQ(parse_double(format_double(v), "test"), v);
  }
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}

TEST(RunDirectoryTest, WritesAndReadsBack) {
  const auto c = small_config();
  const auto ex = run_study(c, 3);
  const fs::path dir = fresh_dir("single");
  write_experiment(dir, ex, c);
  ASSERT_TRUE(is_run_directory(dir));
  EXPECT_EQ(config_hash(load_config(dir / "config.json")), config_hash(c));
  const Json s = read_json(dir / "summary.json");
  EXPECT_EQ(s.at("config_hash"), config_hash(c));
  EXPECT_EQ(s.at("rules").size(), 2U);
  EXPECT_EQ(s.at("rules")[0].at("eta_source"), "grid");
  const Table steps = read_csv(dir / "steps.csv");
  EXPECT_EQ(steps.rows(), 200U);
  EXPECT_TRUE(steps.has("mu"));
  EXPECT_TRUE(steps.has("risk_3"));
  const Table w = read_csv(dir / "KAO-MS" / "weights.csv");
  EXPECT_EQ(w.header, (std::vector<std::string>{"t", "rule", "expert_id", "rho", "eta", "pseudo_loss"}));
  EXPECT_EQ(w.rows(), 200U * 4U);
  const auto rd = read_run_directory(dir);
  ASSERT_EQ(rd.rules.size(), 2U);
  EXPECT_EQ(rd.rules[0].y_agg, ex.record.rules[0].y_agg);  // exact through 17 digits
  EXPECT_EQ(rd.eval_start(), 100U);
}

TEST(PlotDataTest, SingleRunHasNoRunColumn) {
  const auto c = small_config();
  const fs::path dir = fresh_dir("plot_single");
  write_experiment(dir / "run", run_study(c, 3), c);
  const auto files = write_plot_data({dir / "run"}, dir / "plot");
  ASSERT_EQ(files.size(), 4U);
  const Table cum = read_csv(dir / "plot" / "cumulative_error.csv");
  EXPECT_EQ(cum.header, (std::vector<std::string>{"t", "rule", "cum_sq_error"}));
  EXPECT_EQ(cum.rows(), 2U * 100U);
  EXPECT_EQ(cum.cell(0, "t"), "101");
  const Table pred = read_csv(dir / "plot" / "prediction.csv");
  EXPECT_EQ(pred.header, (std::vector<std::string>{"t", "rule", "y", "mu", "y_agg"}));
  const Table mse = read_csv(dir / "plot" / "mse_by_replication.csv");
  EXPECT_EQ(mse.header, (std::vector<std::string>{"run", "rule", "mse"}));
  EXPECT_EQ(mse.rows(), 2U);
}

TEST(PlotDataTest, BatchHasRunColumnAndCumulativeErrorIsMonotone) {
  const auto c = small_config();
  const fs::path dir = fresh_dir("plot_batch");
  for (std::size_t r = 0; r < 2; ++r) {
    write_experiment(dir / "batch" / ("rep_00" + std::to_string(r)), run_study(c, replication_seed(c.seed, r)), c);
  }
  write_plot_data({dir / "batch"}, dir / "plot");
  const Table cum = read_csv(dir / "plot" / "cumulative_error.csv");
  EXPECT_EQ(cum.header.front(), "run");
  EXPECT_EQ(cum.rows(), 2U * 2U * 100U);
  const Vector v = cum.numeric("cum_sq_error");
  for (std::size_t i = 1; i < cum.rows(); ++i) {
    if (cum.text[i][0] == cum.text[i - 1][0] && cum.text[i][2] == cum.text[i - 1][2]) {
      EXPECT_GE(v(static_cast<Eigen::Index>(i)), v(static_cast<Eigen::Index>(i - 1)));
    }
  }
  const Table mse = read_csv(dir / "plot" / "mse_by_replication.csv");
  EXPECT_EQ(mse.rows(), 4U);
  EXPECT_EQ(mse.cell(0, "run"), "rep_000");
  EXPECT_EQ(mse.cell(3, "run"), "rep_001");
}

TEST(PlotDataTest, RejectsEmptyAndMissingInput) {
  const fs::path dir = fresh_dir("plot_bad");
  EXPECT_THROW(write_plot_data({}, dir / "plot"), std::invalid_argument);
  EXPECT_THROW(write_plot_data({dir / "nope"}, dir / "plot"), IoError);
  fs::create_directories(dir / "empty");
  EXPECT_THROW(write_plot_data({dir / "empty"}, dir / "plot"), IoError);
}

TEST(RunNamesTest, DisambiguatesRepeatedNames) {
  EXPECT_EQ(run_names({"a/x", "b/y"}), (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(run_names({"a/x", "b/x"}), (std::vector<std::string>{"a/x", "b/x"}));
}

}  // namespace
}  // namespace kao
