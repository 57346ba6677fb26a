#pragma once

// Synthetic scenarios standing in for a camera frontend: analytic
// trajectories, IMU synthesis with white noise and random-walk biases, a
// random landmark field and stereo observations with visibility and
// track-lifetime rules.

#include "smsckf/augmentation.hpp"
#include "smsckf/geometry.hpp"
#include "smsckf/measurement.hpp"
#include "smsckf/propagation.hpp"
#include "smsckf/state.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace smsckf {

enum class TrajectoryKind { kHover, kStraightAccel, kCircle, kFigureEight, kRunway };

inline const char* to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::kHover: return "hover";
    case TrajectoryKind::kStraightAccel: return "straight-accel";
    case TrajectoryKind::kCircle: return "circle";
    case TrajectoryKind::kFigureEight: return "figure-eight";
    case TrajectoryKind::kRunway: return "runway";
  }
  return "unknown";
}

inline TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "hover") return TrajectoryKind::kHover;
  if (s == "straight-accel") return TrajectoryKind::kStraightAccel;
  if (s == "circle") return TrajectoryKind::kCircle;
  if (s == "figure-eight") return TrajectoryKind::kFigureEight;
  if (s == "runway" || s == "runway-out-and-back") return TrajectoryKind::kRunway;
  throw std::invalid_argument("unknown trajectory kind '" + s + "'");
}

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed-form trajectory description.
///
/// amplitude: circle radius, figure-eight half width, runway one-way distance.
/// For the runway the duration follows from amplitude and peak speed
/// (x = L(1 − cos 2πt/T)/2, so v_max = πL/T); `duration` is ignored there.
struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kHover;
  double amplitude = 5.0;     // m
  double peak_speed = 2.0;    // m/s
  double duration = 10.0;     // s
  double height = 1.5;        // m
  bool yaw_follows_velocity = true;
  double static_prefix = 0.0; // s at rest before the motion starts

  double motion_duration() const {
    if (kind == TrajectoryKind::kRunway) return std::numbers::pi * amplitude / peak_speed;
    return duration;
  }
  double total_duration() const { return static_prefix + motion_duration(); }
};

struct TruthSample {
  double t = 0.0;
  Quaternion q_IG;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();       // world-frame acceleration
  Vec3 w_body = Vec3::Zero();  // body angular rate
};

namespace detail {

// Heading-only attitude: body z stays aligned with world z.
inline Quaternion yaw_quaternion(double yaw) {
  // C(q_IG) = Rz(yaw)ᵀ, i.e. ^I_G q is a JPL rotation of +yaw about z.
  return small_angle_quat(Vec3(0.0, 0.0, yaw));
}

}  // namespace detail

/// Position, velocity, acceleration, attitude and body rate at time t.
inline TruthSample sample_truth(const TrajectorySpec& spec, double t) {
  const double T_total = spec.total_duration();
  if (t < -1e-12 || t > T_total + 1e-9) {
    throw SimulationError("time " + std::to_string(t) + " outside trajectory [0, " +
                          std::to_string(T_total) + "]");
  }
  TruthSample s;
  s.t = t;
  const double tm = std::max(0.0, t - spec.static_prefix);
  const double h = spec.height;
  double yaw = 0.0;
  double yaw_rate = 0.0;

  switch (spec.kind) {
    case TrajectoryKind::kHover: {
      s.p = Vec3(0.0, 0.0, h);
      break;
    }
    case TrajectoryKind::kStraightAccel: {
      const double acc = spec.peak_speed / spec.duration;
      s.p = Vec3(0.5 * acc * tm * tm, 0.0, h);
      s.v = Vec3(acc * tm, 0.0, 0.0);
      s.a = t >= spec.static_prefix ? Vec3(acc, 0.0, 0.0) : Vec3::Zero();
      break;
    }
    case TrajectoryKind::kCircle: {
      const double R = spec.amplitude;
      const double w = spec.peak_speed / R;
      const double c = std::cos(w * tm);
      const double sn = std::sin(w * tm);
      s.p = Vec3(R * c, R * sn, h);
      s.v = Vec3(-R * w * sn, R * w * c, 0.0);
      s.a = Vec3(-R * w * w * c, -R * w * w * sn, 0.0);
      if (spec.yaw_follows_velocity) {
        yaw = w * tm + 0.5 * std::numbers::pi;
        yaw_rate = w;
      }
      break;
    }
    case TrajectoryKind::kFigureEight: {
      const double A = spec.amplitude;
      const double W = spec.peak_speed / (A * std::sqrt(2.0));
      const double s1 = std::sin(W * tm), c1 = std::cos(W * tm);
      const double s2 = std::sin(2.0 * W * tm), c2 = std::cos(2.0 * W * tm);
      const double az = 0.1 * A;  // gentle vertical excursion
      s.p = Vec3(A * s1, 0.5 * A * s2, h + az * s1);
      s.v = Vec3(A * W * c1, A * W * c2, az * W * c1);
      s.a = Vec3(-A * W * W * s1, -2.0 * A * W * W * s2, -az * W * W * s1);
      if (spec.yaw_follows_velocity) {
        const double vx = s.v.x(), vy = s.v.y();
        yaw = std::atan2(vy, vx);
        yaw_rate = (vx * s.a.y() - vy * s.a.x()) / (vx * vx + vy * vy);
      }
      break;
    }
    case TrajectoryKind::kRunway: {
      const double L = spec.amplitude;
      const double T = spec.motion_duration();
      const double k = 2.0 * std::numbers::pi / T;
      s.p = Vec3(0.5 * L * (1.0 - std::cos(k * tm)), 0.0, h);
      s.v = Vec3(0.5 * L * k * std::sin(k * tm), 0.0, 0.0);
      s.a = t >= spec.static_prefix ? Vec3(0.5 * L * k * k * std::cos(k * tm), 0.0, 0.0)
                                    : Vec3::Zero();
      break;
    }
  }
  if (t < spec.static_prefix) {
    s.v.setZero();
    s.a.setZero();
    yaw_rate = 0.0;
  }
  s.q_IG = detail::yaw_quaternion(yaw);
  s.w_body = Vec3(0.0, 0.0, yaw_rate);
  return s;
}

// ---------------------------------------------------------------------------
// Scenario configuration

struct CameraModel {
  double rate = 20.0;                  // Hz
  double field_of_view = 1.57;         // rad, full angle, both axes
  double min_depth = 1.0;              // m
  double max_depth = 40.0;             // m
  int max_track_length = 30;           // frames
  bool speed_dependent_lifetime = false;
  double lifetime_speed_scale = 10.0;  // m/s; lifetime /(1 + speed/scale)
  int min_track_length = 5;
  int max_features = 120;              // per frame
};

struct LandmarkField {
  int count = 1500;
  double margin = 25.0;      // m around the trajectory bounding box
  double clearance = 2.0;    // m, minimum horizontal distance to the path
  double z_min = -2.0;       // m relative to trajectory height
  double z_max = 6.0;
};

/// Camera looking along body +x with image x to body −y and image y to body −z.
inline Quaternion forward_camera_rotation() {
  Mat3 C_CI;
  C_CI << 0.0, -1.0, 0.0,
          0.0, 0.0, -1.0,
          1.0, 0.0, 0.0;
  return rotation_to_quat(C_CI.transpose());  // ^I_C q
}

struct ScenarioConfig {
  TrajectorySpec trajectory;
  double imu_rate = 200.0;
  CameraModel camera;
  LandmarkField landmarks;
  StereoExtrinsics extrinsics;
  Quaternion q_IC = forward_camera_rotation();
  Vec3 p_IC{0.05, 0.0, 0.02};
  NoiseParams noise;
  double noise_scale = 1.0;        // 0 gives noiseless data
  double initial_gyro_bias = 0.0;  // std of the true initial bias, rad/s
  double initial_accel_bias = 0.0; // m/s²
  std::uint64_t seed = 1;

  int frame_stride() const {
    const double ratio = imu_rate / camera.rate;
    const int r = static_cast<int>(std::lround(ratio));
    if (r < 1 || std::abs(ratio - r) > 1e-9) {
      throw SimulationError("imu_rate must be an integer multiple of the camera rate");
    }
    return r;
  }
};

struct TruthState {
  double t = 0.0;
  Quaternion q_IG;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
};

struct Frame {
  double t = 0.0;
  std::vector<std::pair<FeatureId, Vec4d>> observations;
};

/// The generated stream: IMU measurements, per-image feature observations,
/// landmarks and the reference trajectory at IMU rate.
struct TrackTable {
  std::vector<ImuSample> imu;
  std::vector<Frame> frames;
  std::vector<Vec3> landmarks;
  std::vector<TruthState> truth;
};

namespace detail {

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

inline Vec3 gaussian3(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double x = n(rng);
  const double y = n(rng);
  const double z = n(rng);
  return {x, y, z};
}

enum Stream : std::uint64_t { kImuNoise = 1, kLandmarks = 2, kPixelNoise = 3, kBiasInit = 4 };

inline double imu_time(std::int64_t k, double rate) { return static_cast<double>(k) / rate; }

}  // namespace detail

struct ImuSynthesis {
  std::vector<ImuSample> samples;
  std::vector<TruthState> truth;
};

/// IMU measurements and the reference trajectory.
///
/// The reference trajectory is the exact discrete solution of the nominal
/// process model driven by the noise-free kinematic samples, so noiseless
/// data is consistent with the filter's integrator to rounding error.
/// ω_m = ω + b_g + σ_g/√dt ξ,  a_m = C(q)(a − g) + b_a + σ_a/√dt ξ, with
/// b_g, b_a random walks of density σ_wg, σ_wa.
inline ImuSynthesis synth_imu(const ScenarioConfig& cfg) {
  const TrajectorySpec& spec = cfg.trajectory;
  const double rate = cfg.imu_rate;
  const double dt = 1.0 / rate;
  const auto n = static_cast<std::int64_t>(std::floor(spec.total_duration() * rate + 1e-9));
  const NoiseParams& np = cfg.noise;
  const double scale = cfg.noise_scale;
  const Vec3& g = np.gravity;

  auto rng = detail::make_rng(cfg.seed, detail::kImuNoise);
  auto bias_rng = detail::make_rng(cfg.seed, detail::kBiasInit);
  Vec3 b_g = cfg.initial_gyro_bias * detail::gaussian3(bias_rng);
  Vec3 b_a = cfg.initial_accel_bias * detail::gaussian3(bias_rng);

  ImuSynthesis out;
  out.samples.reserve(static_cast<std::size_t>(n + 1));
  out.truth.reserve(static_cast<std::size_t>(n + 1));

  const TruthSample t0 = sample_truth(spec, 0.0);
  ImuState x;
  x.q_IG = t0.q_IG;
  x.p = t0.p;
  x.v = t0.v;
  x.timestamp = 0.0;
  ImuSample prev_clean;
  for (std::int64_t k = 0; k <= n; ++k) {
    const double t = detail::imu_time(k, rate);
    const TruthSample ts = sample_truth(spec, std::min(t, spec.total_duration()));
    const ImuSample clean{t, ts.w_body, quat_to_rotation(ts.q_IG) * (ts.a - g)};
    if (k > 0) x = rk4_step(x, prev_clean, clean, g);
    prev_clean = clean;

    out.truth.push_back({t, x.q_IG, x.p, x.v, b_g, b_a});
    const Vec3 ng = scale * np.sigma_g / std::sqrt(dt) * detail::gaussian3(rng);
    const Vec3 na = scale * np.sigma_a / std::sqrt(dt) * detail::gaussian3(rng);
    out.samples.push_back({t, clean.omega_m + b_g + ng, clean.accel_m + b_a + na});

    b_g += scale * np.sigma_wg * std::sqrt(dt) * detail::gaussian3(rng);
    b_a += scale * np.sigma_wa * std::sqrt(dt) * detail::gaussian3(rng);
  }
  return out;
}

/// Uniform landmarks in the padded bounding box of the path, keeping a
/// horizontal clearance around it.
inline std::vector<Vec3> generate_landmarks(const ScenarioConfig& cfg) {
  const TrajectorySpec& spec = cfg.trajectory;
  const LandmarkField& lf = cfg.landmarks;
  std::vector<Vec3> path;
  const int samples = 400;
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (int i = 0; i <= samples; ++i) {
    const double t = spec.total_duration() * i / samples;
    const Vec3 p = sample_truth(spec, t).p;
    path.push_back(p);
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  lo.head<2>() -= Eigen::Vector2d::Constant(lf.margin);
  hi.head<2>() += Eigen::Vector2d::Constant(lf.margin);
  lo.z() = spec.height + lf.z_min;
  hi.z() = spec.height + lf.z_max;

  auto rng = detail::make_rng(cfg.seed, detail::kLandmarks);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(lf.count));
  int attempts = 0;
  while (static_cast<int>(out.size()) < lf.count && attempts < 100 * lf.count) {
    ++attempts;
    const Vec3 p(lo.x() + u(rng) * (hi.x() - lo.x()), lo.y() + u(rng) * (hi.y() - lo.y()),
                 lo.z() + u(rng) * (hi.z() - lo.z()));
    bool clear = true;
    for (const Vec3& q : path) {
      if ((p.head<2>() - q.head<2>()).norm() < lf.clearance) {
        clear = false;
        break;
      }
    }
    if (clear) out.push_back(p);
  }
  return out;
}

/// True when the landmark lies inside the depth range and field of view of
/// both cameras of the stereo pair.
inline bool stereo_visible(const StereoPoint& sp, const CameraModel& cam) {
  const double half = std::tan(0.5 * cam.field_of_view);
  for (const Vec3* p : {&sp.p_C1, &sp.p_C2}) {
    if (p->z() < cam.min_depth || p->z() > cam.max_depth) return false;
    if (std::abs(p->x() / p->z()) > half || std::abs(p->y() / p->z()) > half) return false;
  }
  return true;
}

/// Noise-free stereo projections of every landmark visible at the given
/// pose, indexed by landmark.
inline std::vector<std::pair<int, Vec4d>> observe(const TruthState& pose,
                                                  const std::vector<Vec3>& landmarks,
                                                  const ScenarioConfig& cfg) {
  ImuState imu;
  imu.q_IG = pose.q_IG;
  imu.p = pose.p;
  imu.q_IC = cfg.q_IC;
  imu.p_IC = cfg.p_IC;
  const CameraPose cp = camera_pose_from_imu(imu);
  std::vector<std::pair<int, Vec4d>> out;
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    const StereoPoint sp = transform_feature(landmarks[i], cp.q_CG, cp.p_GC, cfg.extrinsics);
    if (!stereo_visible(sp, cfg.camera)) continue;
    out.emplace_back(static_cast<int>(i), predict_measurement(sp.p_C1, sp.p_C2));
  }
  return out;
}

/// Full scenario: IMU stream, landmark field and frames with stable track ids.
inline TrackTable simulate(const ScenarioConfig& cfg) {
  const int stride = cfg.frame_stride();
  ImuSynthesis imu = synth_imu(cfg);
  TrackTable table;
  table.landmarks = generate_landmarks(cfg);

  struct TrackSlot {
    FeatureId id = -1;
    int length = 0;
  };
  std::vector<TrackSlot> slots(table.landmarks.size());
  FeatureId next_id = 0;
  const double sigma = cfg.noise_scale * cfg.noise.sigma_im;
  const CameraModel& cam = cfg.camera;

  std::int64_t frame_index = 0;
  for (std::size_t k = 0; k < imu.truth.size(); k += static_cast<std::size_t>(stride), ++frame_index) {
    const TruthState& pose = imu.truth[k];
    auto visible = observe(pose, table.landmarks, cfg);

    int cap = cam.max_track_length;
    if (cam.speed_dependent_lifetime) {
      const double speed = pose.v.norm();
      cap = std::max(cam.min_track_length,
                     static_cast<int>(std::lround(cam.max_track_length /
                                                  (1.0 + speed / cam.lifetime_speed_scale))));
    }

    // Continuing tracks first, then new ones, both in landmark order.
    std::vector<char> keep(table.landmarks.size(), 0);
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < visible.size(); ++i) {
      const TrackSlot& s = slots[static_cast<std::size_t>(visible[i].first)];
      if (s.id >= 0 && s.length < cap) order.push_back(i);
    }
    for (std::size_t i = 0; i < visible.size(); ++i) {
      const TrackSlot& s = slots[static_cast<std::size_t>(visible[i].first)];
      if (!(s.id >= 0 && s.length < cap)) order.push_back(i);
    }
    if (static_cast<int>(order.size()) > cam.max_features) {
      order.resize(static_cast<std::size_t>(cam.max_features));
    }

    auto rng = detail::make_rng(cfg.seed, detail::kPixelNoise, static_cast<std::uint64_t>(frame_index));
    std::normal_distribution<double> nd(0.0, 1.0);
    Frame frame;
    frame.t = pose.t;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return visible[a].first < visible[b].first; });
    for (std::size_t i : order) {
      const int lm = visible[i].first;
      TrackSlot& s = slots[static_cast<std::size_t>(lm)];
      if (s.id >= 0 && s.length < cap) {
        ++s.length;
      } else {
        s.id = next_id++;
        s.length = 1;
      }
      keep[static_cast<std::size_t>(lm)] = 1;
      Vec4d z = visible[i].second;
      for (int c = 0; c < 4; ++c) z(c) += sigma * nd(rng);
      frame.observations.emplace_back(s.id, z);
    }
    for (std::size_t lm = 0; lm < slots.size(); ++lm) {
      if (!keep[lm]) slots[lm] = {};
    }
    table.frames.push_back(std::move(frame));
  }
  table.imu = std::move(imu.samples);
  table.truth = std::move(imu.truth);
  return table;
}

/// Ground-truth IMU state at time t from the reference trajectory, with the
/// scenario extrinsics; biases are the true ones.
inline ImuState truth_imu_state(const TrackTable& table, const ScenarioConfig& cfg, std::size_t k) {
  const TruthState& ts = table.truth.at(k);
  ImuState s;
  s.q_IG = ts.q_IG;
  s.p = ts.p;
  s.v = ts.v;
  s.b_g = ts.b_g;
  s.b_a = ts.b_a;
  s.q_IC = cfg.q_IC;
  s.p_IC = cfg.p_IC;
  s.timestamp = ts.t;
  return s;
}

}  // namespace smsckf
