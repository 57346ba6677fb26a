#include "smsckf/simulator.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using namespace smsckf;

TrajectorySpec spec_of(TrajectoryKind kind, double amplitude, double speed, double duration) {
  TrajectorySpec s;
  s.kind = kind;
  s.amplitude = amplitude;
  s.peak_speed = speed;
  s.duration = duration;
  return s;
}

TEST(Simulator, KinematicsAreConsistent) {
  const double h = 1e-6;
  for (auto kind : {TrajectoryKind::kCircle, TrajectoryKind::kFigureEight, TrajectoryKind::kRunway,
                    TrajectoryKind::kStraightAccel}) {
    const TrajectorySpec spec = spec_of(kind, 5.0, 2.0, 20.0);
    for (double t = 0.5; t < spec.total_duration() - 0.5; t += 0.37) {
      const auto a = sample_truth(spec, t - h), b = sample_truth(spec, t + h), c = sample_truth(spec, t);
      EXPECT_LT(((b.p - a.p) / (2 * h) - c.v).norm(), 1e-6) << to_string(kind) << " t=" << t;
      EXPECT_LT(((b.v - a.v) / (2 * h) - c.a).norm(), 1e-6) << to_string(kind) << " t=" << t;
      // Body rate: C(q(t+h)) ≈ (I − [ω h×]) C(q(t)).
      const Vec3 dtheta = quat_error(b.q_IG, a.q_IG) / (2 * h);
      EXPECT_LT((dtheta - c.w_body).norm(), 1e-6) << to_string(kind) << " t=" << t;
    }
  }
}

TEST(Simulator, HoverIsStill) {
  const TrajectorySpec spec = spec_of(TrajectoryKind::kHover, 1.0, 0.0, 10.0);
  const auto s = sample_truth(spec, 3.0);
  EXPECT_EQ(s.v, Vec3::Zero());
  EXPECT_EQ(s.w_body, Vec3::Zero());
  EXPECT_EQ(s.a, Vec3::Zero());
}

TEST(Simulator, RunwayPeakSpeed) {
  const TrajectorySpec spec = spec_of(TrajectoryKind::kRunway, 150.0, 17.5, 0.0);
  double vmax = 0.0;
  const int n = 20000;
  for (int i = 0; i <= n; ++i) vmax = std::max(vmax, sample_truth(spec, spec.total_duration() * i / n).v.norm());
  EXPECT_NEAR(vmax, 17.5, 1e-9);
  EXPECT_NEAR(sample_truth(spec, spec.total_duration()).p.x(), 0.0, 1e-9);
}

TEST(Simulator, CentripetalAcceleration) {
  const TrajectorySpec spec = spec_of(TrajectoryKind::kCircle, 4.0, 3.0, 10.0);
  const double h = 1e-5;
  const auto a = sample_truth(spec, 2.0 - h), b = sample_truth(spec, 2.0 + h);
  EXPECT_NEAR(((b.v - a.v) / (2 * h)).norm(), 9.0 / 4.0, 1e-6);
  EXPECT_NEAR(sample_truth(spec, 2.0).a.norm(), 9.0 / 4.0, 1e-12);
}

TEST(Simulator, OutOfRangeTimeThrows) {
  const TrajectorySpec spec = spec_of(TrajectoryKind::kCircle, 4.0, 3.0, 10.0);
  EXPECT_THROW(sample_truth(spec, -1.0), SimulationError);
  EXPECT_THROW(sample_truth(spec, 11.0), SimulationError);
}

TEST(Simulator, NoiselessImuIsExactKinematics) {
  ScenarioConfig cfg;
  cfg.trajectory = spec_of(TrajectoryKind::kFigureEight, 5.0, 2.0, 5.0);
  cfg.noise_scale = 0.0;
  const ImuSynthesis imu = synth_imu(cfg);
  for (std::size_t k = 0; k < imu.samples.size(); k += 37) {
    const auto ts = sample_truth(cfg.trajectory, imu.samples[k].timestamp);
    EXPECT_EQ(imu.samples[k].omega_m, ts.w_body);
    EXPECT_LT((imu.samples[k].accel_m - quat_to_rotation(ts.q_IG) * (ts.a - cfg.noise.gravity)).norm(), 1e-15);
  }
  // The reference trajectory integrates these samples; RK4 at 200 Hz stays
  // within a few micrometres of the closed form over 5 s.
  const auto end = sample_truth(cfg.trajectory, imu.truth.back().t);
  EXPECT_LT((imu.truth.back().p - end.p).norm(), 2e-5);
}

TEST(Simulator, HoverSpecificForcePointsUp) {
  ScenarioConfig cfg;
  cfg.noise_scale = 0.0;
  cfg.trajectory.duration = 0.1;
  const ImuSynthesis imu = synth_imu(cfg);
  EXPECT_LT((imu.samples[3].accel_m - Vec3(0.0, 0.0, 9.81)).norm(), 1e-15);
}

TEST(Simulator, BiasRandomWalkVariance) {
  ScenarioConfig cfg;
  cfg.trajectory.duration = 2.0;
  cfg.noise.sigma_wg = 1e-2;
  double sum = 0.0;
  double T = 0.0;
  int count = 0;
  for (std::uint64_t seed = 1; seed <= 500; ++seed) {
    cfg.seed = seed;
    const ImuSynthesis imu = synth_imu(cfg);
    const Vec3 b = imu.truth.back().b_g;
    sum += b.squaredNorm();
    count += 3;
    T = imu.truth.back().t;
  }
  const double expected = cfg.noise.sigma_wg * cfg.noise.sigma_wg * T;
  EXPECT_NEAR(sum / count, expected, 0.1 * expected);
}

TEST(Simulator, LandmarkStraightAheadProjection) {
  ScenarioConfig cfg;
  cfg.q_IC = Quaternion{};
  cfg.p_IC = Vec3::Zero();
  TruthState pose;
  const std::vector<Vec3> lm{Vec3(0.0, 0.0, 5.0), Vec3(0.0, 0.0, 0.5)};
  const auto obs = observe(pose, lm, cfg);
  ASSERT_EQ(obs.size(), 1u);
  EXPECT_EQ(obs[0].first, 0);
  EXPECT_LT((obs[0].second - Vec4d(0.0, 0.0, -0.04, 0.0)).norm(), 1e-15);
}

TEST(Simulator, ObservationsAreVisibleAndTracksCapped) {
  ScenarioConfig cfg;
  cfg.trajectory = spec_of(TrajectoryKind::kCircle, 5.0, 2.0, 10.0);
  cfg.noise_scale = 0.0;
  const TrackTable table = simulate(cfg);
  ASSERT_EQ(table.frames.size(), 201u);
  std::map<FeatureId, int> length;
  std::map<FeatureId, std::size_t> last_frame;
  for (std::size_t k = 0; k < table.frames.size(); ++k) {
    const Frame& f = table.frames[k];
    EXPECT_LE(static_cast<int>(f.observations.size()), cfg.camera.max_features);
    for (const auto& [id, z] : f.observations) {
      if (length.contains(id)) EXPECT_EQ(last_frame[id] + 1, k) << "track " << id << " has a gap";
      ++length[id];
      last_frame[id] = k;
      const double half = std::tan(0.5 * cfg.camera.field_of_view);
      EXPECT_LE(std::abs(z(0)), half);
      EXPECT_LE(std::abs(z(3)), half);
    }
  }
  for (const auto& [id, n] : length) EXPECT_LE(n, cfg.camera.max_track_length);
}

TEST(Simulator, Deterministic) {
  ScenarioConfig cfg;
  cfg.trajectory = spec_of(TrajectoryKind::kCircle, 5.0, 2.0, 3.0);
  const TrackTable a = simulate(cfg), b = simulate(cfg);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    ASSERT_EQ(a.frames[k].observations.size(), b.frames[k].observations.size());
    for (std::size_t i = 0; i < a.frames[k].observations.size(); ++i) {
      EXPECT_EQ(a.frames[k].observations[i].second, b.frames[k].observations[i].second);
    }
  }
  EXPECT_EQ(a.imu.back().accel_m, b.imu.back().accel_m);
  cfg.seed = 2;
  EXPECT_NE(simulate(cfg).imu.back().accel_m, a.imu.back().accel_m);
}

TEST(Simulator, RejectsIncommensurateRates) {
  ScenarioConfig cfg;
  cfg.camera.rate = 30.0;
  EXPECT_THROW(cfg.frame_stride(), SimulationError);
}

TEST(Simulator, ParsesTrajectoryKinds) {
  EXPECT_EQ(parse_trajectory_kind("runway-out-and-back"), TrajectoryKind::kRunway);
  EXPECT_EQ(parse_trajectory_kind("figure-eight"), TrajectoryKind::kFigureEight);
  EXPECT_THROW(parse_trajectory_kind("spiral"), std::invalid_argument);
}

}  // namespace
