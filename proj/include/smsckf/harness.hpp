#pragma once

// Experiment driver: simulate or ingest, filter, evaluate, write CSVs, and
// Monte-Carlo studies over seeds.

#include "smsckf/config.hpp"
#include "smsckf/estimator.hpp"
#include "smsckf/evaluation.hpp"
#include "smsckf/io.hpp"
#include "smsckf/simulator.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

namespace smsckf {

struct StageTimes {
  double load = 0.0;    // simulation or ingest, s
  double filter = 0.0;  // s
  double metrics = 0.0; // s
};

struct RunReport {
  std::uint64_t seed = 0;
  bool has_truth = false;
  RunMetrics metrics;
  AlignmentTransform alignment;
  double mean_nees = 0.0;
  double yaw_var_initial = 0.0;
  double yaw_var_final = 0.0;
  std::vector<NeesSample> nees;
  // (t, variance of the IMU heading about gravity) after each frame
  std::vector<std::pair<double, double>> yaw_variance;
  std::vector<UpdateDiagnostics> diagnostics;
  double max_observability_residual = 0.0;
  double max_h_projection_residual = 0.0;
  double max_abs_residual = 0.0;
  std::size_t frames = 0;
  StageTimes wall;
};

struct RunOutput {
  RunReport report;
  std::vector<ImuState> estimates;  // after each processed frame
  std::vector<TruthState> truth;    // reference at IMU rate, empty without truth
};

using FrameHook = std::function<void(const FrameResult&, const Estimator&)>;

namespace harness_detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline TrajectoryPoint to_point(const ImuState& s) { return {s.timestamp, s.p, s.q_IG, s.v}; }
inline TrajectoryPoint to_point(const TruthState& s) { return {s.t, s.p, s.q_IG, s.v}; }

inline std::vector<FeatureMeasurement> measurements_of(const Frame& f) {
  std::vector<FeatureMeasurement> out;
  out.reserve(f.observations.size());
  for (const auto& [id, z] : f.observations) out.push_back({id, z});
  return out;
}

/// Initial filter state: truth, optionally displaced by a draw from the prior.
inline FilterState initial_filter_state(const RunConfig& cfg, const ImuState& truth) {
  const EstimatorConfig ec = cfg.estimator_config();
  FilterState s = make_filter_state(truth, ec.extrinsics, ec.noise, ec.prior);
  if (cfg.init.error_scale > 0.0) {
    auto rng = detail::make_rng(cfg.scenario.seed, 5);
    std::normal_distribution<double> nd(0.0, 1.0);
    VecX dx(kImuErrorDim);
    for (int i = 0; i < kImuErrorDim; ++i) {
      dx(i) = cfg.init.error_scale * std::sqrt(s.P(i, i)) * nd(rng);
    }
    s = apply_correction(std::move(s), dx);
    s.imu_null = {s.imu.q_IG, s.imu.v, s.imu.p};
  }
  return s;
}

inline void fill_truth_metrics(RunReport& rep, const RunConfig& cfg,
                               const std::vector<ImuState>& est,
                               const std::vector<TruthState>& truth) {
  Trajectory e, t;
  e.reserve(est.size());
  t.reserve(truth.size());
  for (const auto& s : est) e.push_back(to_point(s));
  for (const auto& s : truth) t.push_back(to_point(s));
  if (cfg.align) {
    rep.alignment = align_yaw_position(e, t, cfg.alignment);
    rep.metrics = compute_metrics(apply_alignment(e, rep.alignment), t);
  } else {
    rep.metrics = compute_metrics(e, t);
  }
}

}  // namespace harness_detail

/// Runs the filter over a prepared stream. `truth` may be empty; when given
/// it must hold the reference at every frame timestamp (matched by time).
inline RunOutput run_stream(const RunConfig& cfg, const std::vector<ImuSample>& imu,
                            const std::vector<Frame>& frames, const FilterState& initial,
                            const std::vector<TruthState>& truth, const FrameHook& hook = {}) {
  using namespace harness_detail;
  RunOutput out;
  RunReport& rep = out.report;
  rep.seed = cfg.scenario.seed;
  rep.has_truth = !truth.empty();

  const auto t_filter = Clock::now();
  Estimator est(cfg.estimator_config(), initial.imu, initial.P);
  rep.yaw_var_initial = imu_yaw_variance(est.state());

  std::size_t next_imu = 0;
  std::size_t next_truth = 0;
  double nees_sum = 0.0;
  for (const Frame& f : frames) {
    if (f.t < initial.imu.timestamp) continue;
    while (next_imu < imu.size() && imu[next_imu].timestamp <= f.t) {
      if (imu[next_imu].timestamp >= initial.imu.timestamp || next_imu + 1 == imu.size() ||
          imu[next_imu + 1].timestamp > initial.imu.timestamp) {
        est.feed_imu(imu[next_imu]);
      }
      ++next_imu;
    }
    // One sample past the frame lets the estimator interpolate exactly to it.
    if (next_imu < imu.size() && est.state().imu.timestamp < f.t) est.feed_imu(imu[next_imu++]);
    const auto meas = measurements_of(f);
    const FrameResult fr = est.process_frame(f.t, meas);
    if (hook) hook(fr, est);

    const FilterState& s = est.state();
    out.estimates.push_back(s.imu);
    rep.yaw_variance.emplace_back(f.t, imu_yaw_variance(s));
    ++rep.frames;

    if (rep.has_truth) {
      while (next_truth < truth.size() && truth[next_truth].t < f.t - 1e-9) ++next_truth;
      if (next_truth < truth.size() && std::abs(truth[next_truth].t - f.t) <= 1e-9) {
        const NeesSample ns = nees(to_point(s.imu), to_point(truth[next_truth]),
                                   pose_velocity_marginal(s.P));
        nees_sum += ns.total;
        rep.nees.push_back(ns);
      }
    }
  }
  rep.wall.filter = seconds_since(t_filter);
  rep.diagnostics = est.diagnostics();
  rep.max_observability_residual = est.max_observability_residual();
  for (const auto& d : rep.diagnostics) {
    rep.max_h_projection_residual = std::max(rep.max_h_projection_residual, d.h_projection_residual);
    rep.max_abs_residual = std::max(rep.max_abs_residual, d.max_abs_residual);
  }
  rep.yaw_var_final = rep.yaw_variance.empty() ? rep.yaw_var_initial : rep.yaw_variance.back().second;
  if (!rep.nees.empty()) rep.mean_nees = nees_sum / static_cast<double>(rep.nees.size());

  const auto t_metrics = Clock::now();
  if (rep.has_truth && out.estimates.size() >= 2) {
    fill_truth_metrics(rep, cfg, out.estimates, truth);
  }
  rep.wall.metrics = seconds_since(t_metrics);
  return out;
}

/// simulate → filter → metrics.
inline RunOutput run_simulation(const RunConfig& cfg, const FrameHook& hook = {},
                                TrackTable* table_out = nullptr) {
  cfg.validate();
  const auto t0 = harness_detail::Clock::now();
  TrackTable table = simulate(cfg.scenario);
  const double load = harness_detail::seconds_since(t0);
  const FilterState init =
      harness_detail::initial_filter_state(cfg, truth_imu_state(table, cfg.scenario, 0));
  RunOutput out = run_stream(cfg, table.imu, table.frames, init, table.truth, hook);
  out.report.wall.load = load;
  out.truth = table.truth;
  if (table_out) *table_out = std::move(table);
  return out;
}

/// ingest → filter → metrics. Ground truth seeds the initial state when
/// present; otherwise a static start is assumed.
inline RunOutput run_ingest(const RunConfig& cfg, const FrameHook& hook = {}) {
  if (cfg.ingest.imu.empty() || cfg.ingest.tracks.empty()) {
    throw ConfigError("ingest mode needs both an IMU and a track file");
  }
  const auto t0 = harness_detail::Clock::now();
  const auto imu = ingest_imu_csv(cfg.ingest.imu);
  const auto frames = ingest_tracks_csv(cfg.ingest.tracks);
  std::vector<TruthState> truth;
  if (!cfg.ingest.groundtruth.empty()) {
    for (const auto& r : ingest_groundtruth_csv(cfg.ingest.groundtruth)) {
      truth.push_back({r.t, r.q, r.p, r.v, Vec3::Zero(), Vec3::Zero()});
    }
  }
  const double load = harness_detail::seconds_since(t0);
  if (imu.empty()) throw ConfigError("IMU file '" + cfg.ingest.imu + "' holds no samples");

  ImuState start;
  if (!truth.empty()) {
    const TruthState& t = truth.front();
    start.q_IG = t.q_IG;
    start.p = t.p;
    start.v = t.v;
    start.timestamp = t.t;
  } else {
    std::vector<ImuSample> still;
    for (const auto& s : imu) {
      if (s.timestamp - imu.front().timestamp > cfg.ingest.static_duration) break;
      still.push_back(s);
    }
    start = initialize_from_static(still, cfg.scenario.noise.gravity, cfg.scenario.q_IC,
                                   cfg.scenario.p_IC);
  }
  start.q_IC = cfg.scenario.q_IC;
  start.p_IC = cfg.scenario.p_IC;
  const EstimatorConfig ec = cfg.estimator_config();
  const FilterState init = make_filter_state(start, ec.extrinsics, ec.noise, ec.prior);

  // NEES needs the full reference state at each frame; with external truth
  // only the trajectory metrics are reported.
  RunOutput out = run_stream(cfg, imu, frames, init, {}, hook);
  out.report.wall.load = load;
  if (!truth.empty()) {
    out.report.has_truth = true;
    const auto tm = harness_detail::Clock::now();
    harness_detail::fill_truth_metrics(out.report, cfg, out.estimates, truth);
    out.report.wall.metrics = harness_detail::seconds_since(tm);
    out.truth = std::move(truth);
  }
  return out;
}

inline RunOutput run(const RunConfig& cfg, const FrameHook& hook = {}) {
  return cfg.ingest.active() ? run_ingest(cfg, hook) : run_simulation(cfg, hook);
}

// ---------------------------------------------------------------------------
// Output files

inline constexpr const char* kReportCsvHeader =
    "seed,rmse_xy,rmse_xyz,final_drift,drift_fraction,mean_nees,yaw_var_final";

inline std::string report_csv_row(const RunReport& r) {
  using csv::fmt;
  return std::to_string(r.seed) + ',' + fmt(r.metrics.rmse_xy) + ',' + fmt(r.metrics.rmse_xyz) +
         ',' + fmt(r.metrics.final_drift) + ',' + fmt(r.metrics.drift_fraction) + ',' +
         fmt(r.mean_nees) + ',' + fmt(r.yaw_var_final);
}

inline void write_report_csv(const std::string& path, const std::vector<const RunReport*>& reports) {
  auto out = csv::open_out(path);
  out << kReportCsvHeader << '\n';
  for (const RunReport* r : reports) out << report_csv_row(*r) << '\n';
}

/// estimate.csv, groundtruth.csv, diagnostics.csv, nees.csv and report.csv.
inline void write_run_outputs(const std::string& dir, const RunOutput& out) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  {
    auto f = csv::open_out((d / "estimate.csv").string());
    f << kStateCsvHeader << '\n';
    for (const auto& s : out.estimates) f << state_csv_row(s) << '\n';
  }
  if (!out.truth.empty()) write_groundtruth_csv((d / "groundtruth.csv").string(), out.truth);
  {
    auto f = csv::open_out((d / "diagnostics.csv").string());
    f << kDiagnosticsCsvHeader << '\n';
    for (const auto& diag : out.report.diagnostics) f << diagnostics_csv_row(diag) << '\n';
  }
  {
    auto f = csv::open_out((d / "nees.csv").string());
    f << "timestamp_ns,nees_theta,nees_v,nees_p,nees_total\n";
    for (const auto& n : out.report.nees) {
      f << csv::to_ns(n.t) << ',' << csv::fmt(n.theta) << ',' << csv::fmt(n.v) << ','
        << csv::fmt(n.p) << ',' << csv::fmt(n.total) << '\n';
    }
  }
  {
    auto f = csv::open_out((d / "yaw_variance.csv").string());
    f << "timestamp_ns,yaw_variance\n";
    for (const auto& [t, v] : out.report.yaw_variance) f << csv::to_ns(t) << ',' << csv::fmt(v) << '\n';
  }
  write_report_csv((d / "report.csv").string(), {&out.report});
}

/// imu.csv, tracks.csv, groundtruth.csv and landmarks.csv of a scenario.
inline void write_simulation(const std::string& dir, const TrackTable& table) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  write_imu_csv((d / "imu.csv").string(), table.imu);
  write_tracks_csv((d / "tracks.csv").string(), table.frames);
  write_groundtruth_csv((d / "groundtruth.csv").string(), table.truth);
  write_landmarks_csv((d / "landmarks.csv").string(), table.landmarks);
}

// ---------------------------------------------------------------------------
// Monte Carlo

struct MonteCarloOptions {
  int runs = 10;
  std::uint64_t first_seed = 1;
  bool compare_oc = false;  // also run every seed with both constraints off
  unsigned threads = 0;     // 0: hardware concurrency
};

struct NeesEnvelope {
  std::vector<double> t;
  std::vector<double> average;  // per timestep, over runs
  double lower = 0.0;           // two-sided 95% bounds of the run average
  double upper = 0.0;
  double fraction_below_upper = 0.0;
  double fraction_within = 0.0;
};

struct MonteCarloReport {
  std::map<std::uint64_t, RunReport> runs;
  std::map<std::uint64_t, RunReport> runs_without_oc;
  double mean_drift_fraction = 0.0;
  double median_drift_fraction = 0.0;
  NeesEnvelope nees;
  bool yaw_never_gained = true;       // constrained runs: final ≥ initial
  int seeds_with_smaller_naive_yaw = 0;
};

/// Average of n independent 9-dof NEES values: n·avg ~ χ²(9n).
inline std::pair<double, double> average_nees_bounds(int runs, int dof = 9, double mass = 0.95) {
  boost::math::chi_squared dist(static_cast<double>(dof * runs));
  const double tail = 0.5 * (1.0 - mass);
  return {boost::math::quantile(dist, tail) / runs, boost::math::quantile(dist, 1.0 - tail) / runs};
}

inline NeesEnvelope nees_envelope(const std::map<std::uint64_t, RunReport>& runs) {
  NeesEnvelope env;
  if (runs.empty()) return env;
  std::size_t len = std::numeric_limits<std::size_t>::max();
  for (const auto& [_, r] : runs) len = std::min(len, r.nees.size());
  const int n = static_cast<int>(runs.size());
  std::tie(env.lower, env.upper) = average_nees_bounds(n);
  std::size_t below = 0, within = 0;
  for (std::size_t k = 0; k < len; ++k) {
    double sum = 0.0;
    for (const auto& [_, r] : runs) sum += r.nees[k].total;
    const double avg = sum / n;
    env.t.push_back(runs.begin()->second.nees[k].t);
    env.average.push_back(avg);
    if (avg <= env.upper) ++below;
    if (avg <= env.upper && avg >= env.lower) ++within;
  }
  if (len > 0) {
    env.fraction_below_upper = static_cast<double>(below) / static_cast<double>(len);
    env.fraction_within = static_cast<double>(within) / static_cast<double>(len);
  }
  return env;
}

/// Runs `jobs` tasks on a small pool; the first exception is rethrown.
inline void parallel_for(std::size_t jobs, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(jobs, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline MonteCarloReport monte_carlo(const RunConfig& base, const MonteCarloOptions& opt) {
  if (opt.runs < 2) throw ConfigError("Monte-Carlo needs at least 2 runs, got " + std::to_string(opt.runs));
  base.validate();
  const std::size_t n = static_cast<std::size_t>(opt.runs);
  const std::size_t jobs = opt.compare_oc ? 2 * n : n;
  std::vector<RunReport> results(jobs);
  parallel_for(jobs, opt.threads, [&](std::size_t j) {
    RunConfig cfg = base;
    cfg.scenario.seed = opt.first_seed + (j % n);
    if (j >= n) {
      cfg.propagation.observability_constraint = false;
      cfg.update.h_projection = false;
    }
    RunReport r = run_simulation(cfg).report;
    r.diagnostics.clear();
    results[j] = std::move(r);
  });

  MonteCarloReport rep;
  for (std::size_t j = 0; j < jobs; ++j) {
    auto& dst = j < n ? rep.runs : rep.runs_without_oc;
    dst.emplace(results[j].seed, std::move(results[j]));
  }
  std::vector<double> drift;
  for (const auto& [seed, r] : rep.runs) {
    drift.push_back(r.metrics.drift_fraction);
    if (r.yaw_var_final < r.yaw_var_initial) rep.yaw_never_gained = false;
    const auto it = rep.runs_without_oc.find(seed);
    if (it != rep.runs_without_oc.end() && it->second.yaw_var_final < r.yaw_var_final) {
      ++rep.seeds_with_smaller_naive_yaw;
    }
  }
  rep.mean_drift_fraction = std::accumulate(drift.begin(), drift.end(), 0.0) / static_cast<double>(drift.size());
  std::sort(drift.begin(), drift.end());
  const std::size_t m = drift.size();
  rep.median_drift_fraction = m % 2 ? drift[m / 2] : 0.5 * (drift[m / 2 - 1] + drift[m / 2]);
  rep.nees = nees_envelope(rep.runs);
  return rep;
}

inline void write_monte_carlo_outputs(const std::string& dir, const MonteCarloReport& rep) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  std::vector<const RunReport*> rows;
  for (const auto& [_, r] : rep.runs) rows.push_back(&r);
  write_report_csv((d / "report.csv").string(), rows);
  if (!rep.runs_without_oc.empty()) {
    std::vector<const RunReport*> naive;
    for (const auto& [_, r] : rep.runs_without_oc) naive.push_back(&r);
    write_report_csv((d / "report_without_oc.csv").string(), naive);
  }
  auto f = csv::open_out((d / "nees_average.csv").string());
  f << "timestamp_ns,average_nees,lower_bound,upper_bound\n";
  for (std::size_t k = 0; k < rep.nees.t.size(); ++k) {
    f << csv::to_ns(rep.nees.t[k]) << ',' << csv::fmt(rep.nees.average[k]) << ','
      << csv::fmt(rep.nees.lower) << ',' << csv::fmt(rep.nees.upper) << '\n';
  }
}

}  // namespace smsckf
