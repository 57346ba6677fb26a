// Command-line front end: simulate, run, montecarlo, selftest.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
// 3 selftest failure.

#include "smsckf/config.hpp"
#include "smsckf/harness.hpp"
#include "smsckf/selftest.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitSelftest = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  bool disable_oc = false;
  bool disable_h_projection = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_config) {
  auto* c = cmd->add_option("--config,-c", o.config, "configuration file");
  if (needs_config) c->required();
  cmd->add_option("--seed", o.seed, "random seed, overrides sim.seed");
  cmd->add_option("--out-dir,-o", o.out_dir, "output directory")->capture_default_str();
  cmd->add_flag("--disable-oc", o.disable_oc, "propagate without the observability constraint");
  cmd->add_flag("--disable-h-projection", o.disable_h_projection,
                "skip projecting measurement Jacobians onto the observable subspace");
  cmd->add_option("--set", o.overrides, "section.key=value override, repeatable");
}

smsckf::RunConfig resolve(const CommonOptions& o) {
  smsckf::RunConfig cfg = o.config.empty() ? smsckf::RunConfig{} : smsckf::load_config(o.config);
  for (const std::string& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw smsckf::ConfigError("--set expects section.key=value, got '" + kv + "'");
    smsckf::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.scenario.seed = *o.seed;
  if (o.disable_oc) cfg.propagation.observability_constraint = false;
  if (o.disable_h_projection) cfg.update.h_projection = false;
  cfg.validate();
  return cfg;
}

void print_report(const smsckf::RunReport& r) {
  std::printf("frames            %zu\n", r.frames);
  if (r.has_truth) {
    std::printf("rmse_xy           %.6g m\n", r.metrics.rmse_xy);
    std::printf("rmse_xyz          %.6g m\n", r.metrics.rmse_xyz);
    std::printf("final_drift       %.6g m\n", r.metrics.final_drift);
    std::printf("path_length       %.6g m\n", r.metrics.path_length);
    std::printf("drift_fraction    %.4f %%\n", 100.0 * r.metrics.drift_fraction);
    std::printf("alignment         yaw %.6g rad, offset %.4g s\n", r.alignment.yaw, r.alignment.time_offset);
  }
  if (!r.nees.empty()) std::printf("mean_nees         %.4g (9 dof)\n", r.mean_nees);
  std::printf("yaw_var           %.4g -> %.4g rad^2\n", r.yaw_var_initial, r.yaw_var_final);
  std::printf("max OC residual   %.3g\n", r.max_observability_residual);
  std::printf("wall clock        load %.3f s, filter %.3f s, metrics %.3f s\n", r.wall.load,
              r.wall.filter, r.wall.metrics);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stereo sliding-window visual-inertial filter"};
  app.require_subcommand(1);

  CommonOptions sim_opt, run_opt, mc_opt;
  auto* sim = app.add_subcommand("simulate", "generate IMU, track and ground-truth CSVs");
  add_common(sim, sim_opt, false);

  auto* run = app.add_subcommand("run", "filter a simulated scenario or ingested CSV data");
  add_common(run, run_opt, false);
  std::string imu_path, tracks_path, gt_path;
  run->add_option("--imu", imu_path, "IMU CSV to ingest instead of simulating");
  run->add_option("--tracks", tracks_path, "track CSV to ingest");
  run->add_option("--groundtruth", gt_path, "ground-truth CSV for metrics and initialization");

  auto* mc = app.add_subcommand("montecarlo", "repeat a scenario over seeds");
  add_common(mc, mc_opt, false);
  int runs = 10;
  bool compare_oc = false;
  unsigned threads = 0;
  mc->add_option("--runs,-n", runs, "number of seeds")->capture_default_str();
  mc->add_flag("--compare-oc", compare_oc, "also run every seed without the observability constraint");
  mc->add_option("--threads", threads, "worker threads, 0 for all cores")->capture_default_str();

  auto* st = app.add_subcommand("selftest", "Jacobian, null-space and observability checks");
  std::uint64_t st_seed = 7;
  int trials = 100;
  st->add_option("--seed", st_seed, "random seed")->capture_default_str();
  st->add_option("--trials", trials, "random configurations per check")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  smsckf::RunConfig cfg;
  try {
    if (*sim) cfg = resolve(sim_opt);
    if (*run) {
      cfg = resolve(run_opt);
      if (!imu_path.empty()) cfg.ingest.imu = imu_path;
      if (!tracks_path.empty()) cfg.ingest.tracks = tracks_path;
      if (!gt_path.empty()) cfg.ingest.groundtruth = gt_path;
      if (cfg.ingest.imu.empty() != cfg.ingest.tracks.empty()) {
        throw smsckf::ConfigError("--imu and --tracks must be given together");
      }
    }
    if (*mc) cfg = resolve(mc_opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*sim) {
      const smsckf::TrackTable table = smsckf::simulate(cfg.scenario);
      smsckf::write_simulation(sim_opt.out_dir, table);
      std::printf("wrote %zu IMU samples, %zu frames, %zu landmarks to %s\n", table.imu.size(),
                  table.frames.size(), table.landmarks.size(), sim_opt.out_dir.c_str());
      return 0;
    }
    if (*run) {
      const smsckf::RunOutput out = smsckf::run(cfg);
      smsckf::write_run_outputs(run_opt.out_dir, out);
      print_report(out.report);
      return 0;
    }
    if (*mc) {
      smsckf::MonteCarloOptions opt;
      opt.runs = runs;
      opt.first_seed = cfg.scenario.seed;
      opt.compare_oc = compare_oc;
      opt.threads = threads;
      const smsckf::MonteCarloReport rep = smsckf::monte_carlo(cfg, opt);
      smsckf::write_monte_carlo_outputs(mc_opt.out_dir, rep);
      std::printf("runs                   %d\n", runs);
      std::printf("mean drift_fraction    %.4f %%\n", 100.0 * rep.mean_drift_fraction);
      std::printf("median drift_fraction  %.4f %%\n", 100.0 * rep.median_drift_fraction);
      std::printf("average NEES bounds    [%.3f, %.3f]\n", rep.nees.lower, rep.nees.upper);
      std::printf("timesteps below upper  %.1f %%\n", 100.0 * rep.nees.fraction_below_upper);
      std::printf("timesteps within       %.1f %%\n", 100.0 * rep.nees.fraction_within);
      std::printf("yaw never gained (OC)  %s\n", rep.yaw_never_gained ? "yes" : "no");
      if (compare_oc) {
        std::printf("naive yaw smaller      %d of %d seeds\n", rep.seeds_with_smaller_naive_yaw, runs);
      }
      return 0;
    }
    if (*st) {
      bool ok = true;
      for (const auto& r : smsckf::run_selftest(st_seed, trials)) {
        std::printf("%-40s worst %.3e  tolerance %.0e  %s\n", r.name.c_str(), r.worst, r.tolerance,
                    r.passed() ? "ok" : "FAILED");
        ok = ok && r.passed();
      }
      return ok ? 0 : kExitSelftest;
    }
  } catch (const smsckf::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
