#include "smsckf/config.hpp"
#include "smsckf/harness.hpp"
#include "smsckf/selftest.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace {

using namespace smsckf;
namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("smsckf_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

TEST(Config, ParsesSectionsAndComments) {
  std::istringstream in(
      "# comment\n"
      "[trajectory]\n"
      "kind = circle   # inline\n"
      "amplitude = 4\n"
      "[filter]\n"
      "max_window = 12\n"
      "observability_constraint = false\n"
      "[camera]\n"
      "p_IC = 0.1, 0.2, 0.3\n");
  const RunConfig cfg = parse_config(in, "inline");
  EXPECT_EQ(cfg.scenario.trajectory.kind, TrajectoryKind::kCircle);
  EXPECT_EQ(cfg.scenario.trajectory.amplitude, 4.0);
  EXPECT_EQ(cfg.max_window, 12u);
  EXPECT_FALSE(cfg.propagation.observability_constraint);
  EXPECT_EQ(cfg.scenario.p_IC, Vec3(0.1, 0.2, 0.3));
}

TEST(Config, UnknownKeyNamesOriginAndLine) {
  std::istringstream in("[filter]\nmax_window = 10\nwindow_size = 3\n");
  try {
    parse_config(in, "bad.cfg");
    FAIL() << "expected a configuration error";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bad.cfg:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("window_size"), std::string::npos) << msg;
  }
}

TEST(Config, RejectsMalformedInput) {
  for (const char* text : {"[nosuch]\n", "[filter]\nmax_window\n", "max_window = 3\n", "[filter]\nmax_window =\n",
                           "[filter]\nmax_window = 2\n", "[filter]\ngating = maybe\n", "[trajectory\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(parse_config(in, "x"), ConfigError) << text;
  }
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"hover.cfg", "circle.cfg", "figure8.cfg", "runway.cfg"}) {
    EXPECT_NO_THROW(load_config(std::string(SMSCKF_CONFIG_DIR) + "/" + name)) << name;
  }
}

TEST(Config, MissingFileNamesPath) {
  try {
    load_config("/nonexistent/run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/run.cfg"), std::string::npos);
  }
}

TEST(Config, EveryKeyIsSettable) {
  const auto keys = config_keys();
  EXPECT_GT(keys.size(), 50u);
  RunConfig cfg;
  set_config_value(cfg, "sim.seed", "42");
  EXPECT_EQ(cfg.scenario.seed, 42u);
  EXPECT_THROW(set_config_value(cfg, "sim.nothing", "1"), ConfigError);
}

RunConfig hover_config(double duration, double noise) {
  RunConfig cfg;
  cfg.scenario.trajectory.kind = TrajectoryKind::kHover;
  cfg.scenario.trajectory.duration = duration;
  cfg.scenario.noise_scale = noise;
  return cfg;
}

TEST(Harness, NoiselessHoverIsExact) {
  const RunOutput out = run(hover_config(10.0, 0.0));
  EXPECT_LT(out.report.metrics.rmse_xyz, 1e-3);
  EXPECT_LT(out.report.max_abs_residual, 1e-8);
  EXPECT_EQ(out.report.frames, 201u);
  EXPECT_EQ(out.report.nees.size(), 201u);
}

TEST(Harness, ReportIsDeterministic) {
  const RunConfig cfg = hover_config(3.0, 1.0);
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  write_run_outputs(a.string(), run(cfg));
  write_run_outputs(b.string(), run(cfg));
  const std::string ra = slurp(a / "report.csv");
  EXPECT_FALSE(ra.empty());
  EXPECT_EQ(ra, slurp(b / "report.csv"));
  EXPECT_EQ(slurp(a / "estimate.csv"), slurp(b / "estimate.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Harness, IngestMatchesSimulation) {
  // Writing a scenario out and reading it back runs the same filter.
  RunConfig cfg = hover_config(2.0, 1.0);
  const fs::path d = scratch_dir("ingest");
  TrackTable table;
  const RunOutput direct = run_simulation(cfg, {}, &table);
  write_simulation(d.string(), table);
  cfg.ingest.imu = (d / "imu.csv").string();
  cfg.ingest.tracks = (d / "tracks.csv").string();
  cfg.ingest.groundtruth = (d / "groundtruth.csv").string();
  const RunOutput ingested = run(cfg);
  ASSERT_EQ(ingested.estimates.size(), direct.estimates.size());
  EXPECT_LT((ingested.estimates.back().p - direct.estimates.back().p).norm(), 1e-9);
  fs::remove_all(d);
}

TEST(Harness, MonteCarloNeedsTwoRuns) {
  MonteCarloOptions opt;
  opt.runs = 1;
  EXPECT_THROW(monte_carlo(hover_config(1.0, 1.0), opt), ConfigError);
}

TEST(Harness, MonteCarloAggregates) {
  MonteCarloOptions opt;
  opt.runs = 2;
  opt.compare_oc = true;
  opt.threads = 1;
  const MonteCarloReport rep = monte_carlo(hover_config(1.0, 1.0), opt);
  EXPECT_EQ(rep.runs.size(), 2u);
  EXPECT_EQ(rep.runs_without_oc.size(), 2u);
  EXPECT_EQ(rep.nees.average.size(), 21u);
  EXPECT_LT(rep.nees.lower, 9.0);
  EXPECT_GT(rep.nees.upper, 9.0);
}

TEST(Harness, AverageNeesBounds) {
  // 25 runs of 9 dof: χ²(225) quantiles divided by 25.
  const auto [lo, hi] = average_nees_bounds(25);
  EXPECT_NEAR(lo, 185.5 / 25.0, 0.05);
  EXPECT_NEAR(hi, 268.3 / 25.0, 0.05);
}

TEST(Harness, ParallelForRethrows) {
  EXPECT_THROW(parallel_for(4, 2, [](std::size_t i) {
                 if (i == 2) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}

TEST(Selftest, AllChecksPass) {
  for (const auto& r : run_selftest(7, 20)) EXPECT_TRUE(r.passed()) << r.name << " worst " << r.worst;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const fs::path log = fs::temp_directory_path() / "smsckf_cli_output.txt";
  const std::string cmd = std::string(SMSCKF_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = slurp(log);
  return WEXITSTATUS(status);
}

TEST(Cli, MissingConfigExitsNonZeroNamingPath) {
  std::string out;
  EXPECT_EQ(run_cli("run --config /nonexistent/cfg.cfg", &out), 1);
  EXPECT_NE(out.find("/nonexistent/cfg.cfg"), std::string::npos) << out;
}

TEST(Cli, SelftestSucceeds) { EXPECT_EQ(run_cli("selftest --trials 10"), 0); }

TEST(Cli, RunWritesOutputs) {
  const fs::path d = scratch_dir("cli_run");
  const std::string args = "run --config " + std::string(SMSCKF_CONFIG_DIR) +
                           "/hover.cfg --set trajectory.duration=2 --out-dir " + d.string();
  EXPECT_EQ(run_cli(args), 0);
  for (const char* f : {"report.csv", "estimate.csv", "groundtruth.csv", "diagnostics.csv", "nees.csv"}) {
    EXPECT_TRUE(fs::exists(d / f)) << f;
  }
  EXPECT_EQ(slurp(d / "report.csv").rfind(kReportCsvHeader, 0), 0u);
  fs::remove_all(d);
}

TEST(Cli, BadOverrideIsUsageError) {
  EXPECT_EQ(run_cli("run --set filter.nosuch=1"), 1);
  EXPECT_EQ(run_cli("bogus"), 1);
}

}  // namespace
