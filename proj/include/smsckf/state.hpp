#pragma once

// Nominal state, sliding window of camera poses and the joint error-state
// covariance. Error-state layout (21 + 6N):
//
//   [ θ  b_g  v  b_a  p  θ_IC  p_IC | θ_C1 p_C1 | ... | θ_CN p_CN ]
//     0  3    6  9    12 15    18     21          ...

#include "smsckf/geometry.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace smsckf {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;
using CamId = std::int64_t;

inline constexpr int kImuErrorDim = 21;
inline constexpr int kCamErrorDim = 6;
inline constexpr int kNoiseDim = 12;

class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Continuous-time noise densities and gravity.
struct NoiseParams {
  double sigma_g = 1e-3;    // rad/s/√Hz
  double sigma_wg = 1e-5;   // rad/s²/√Hz
  double sigma_a = 1e-2;    // m/s²/√Hz
  double sigma_wa = 1e-4;   // m/s³/√Hz
  double sigma_im = 1.0 / 480.0;  // normalized image units, per axis
  Vec3 gravity{0.0, 0.0, -9.81};

  void validate() const {
    if (!(sigma_g > 0 && sigma_wg > 0 && sigma_a > 0 && sigma_wa > 0 &&
          sigma_im > 0)) {
      throw StateError("noise parameters must be strictly positive");
    }
  }
};

struct ImuState {
  Quaternion q_IG;  // ^I_G q
  Vec3 b_g = Vec3::Zero();
  Vec3 v = Vec3::Zero();  // ^G v_I
  Vec3 b_a = Vec3::Zero();
  Vec3 p = Vec3::Zero();  // ^G p_I
  Quaternion q_IC;        // ^I_C q, left camera to IMU
  Vec3 p_IC = Vec3::Zero();  // ^I p_C
  double timestamp = 0.0;
};

/// Orientation and position at which the unobservable directions are
/// evaluated for the observability constraint.
struct LinearizationPoint {
  Quaternion q;
  Vec3 v = Vec3::Zero();
  Vec3 p = Vec3::Zero();
};

struct CamState {
  CamId id = 0;
  Quaternion q_CG;  // ^C_G q, left camera
  Vec3 p_GC = Vec3::Zero();
  double timestamp = 0.0;
  // Pose at augmentation time, before any update moved it.
  Quaternion q_CG_null;
  Vec3 p_GC_null = Vec3::Zero();
};

/// Known left-to-right stereo calibration.
struct StereoExtrinsics {
  Quaternion q_C2C1;  // ^{C2}_{C1} q
  Vec3 p_C1C2{0.2, 0.0, 0.0};  // ^{C1} p_{C2}

  double baseline() const { return p_C1C2.norm(); }
};

/// Diagonal prior variances for a fresh filter.
struct InitialCovariance {
  double orientation = 1e-4;
  double gyro_bias = 1e-2;
  double velocity = 0.25;
  double accel_bias = 1e-1;
  double position = 0.0;
  double extrinsic_rotation = 1e-8;
  double extrinsic_translation = 1e-8;
};

struct FilterState {
  ImuState imu;
  LinearizationPoint imu_null;
  std::vector<CamState> cams;
  MatX P = MatX::Zero(kImuErrorDim, kImuErrorDim);
  StereoExtrinsics extrinsics;
  NoiseParams params;
  CamId next_cam_id = 0;

  int dim() const { return kImuErrorDim + kCamErrorDim * static_cast<int>(cams.size()); }
};

/// Half-open index range into the error state.
struct ErrorRange {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool operator==(const ErrorRange&) const = default;
};

enum class ErrorComponent {
  kOrientation,
  kGyroBias,
  kVelocity,
  kAccelBias,
  kPosition,
  kExtrinsicRotation,
  kExtrinsicTranslation,
  kCamOrientation,
  kCamPosition,
};

namespace index {
inline constexpr int kTheta = 0;
inline constexpr int kBg = 3;
inline constexpr int kV = 6;
inline constexpr int kBa = 9;
inline constexpr int kP = 12;
inline constexpr int kThetaIC = 15;
inline constexpr int kPIC = 18;
}  // namespace index

/// Offset of the camera with the given id, or -1.
inline int cam_position(const FilterState& s, CamId id) {
  for (std::size_t i = 0; i < s.cams.size(); ++i) {
    if (s.cams[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

inline int cam_offset(int window_position) {
  return kImuErrorDim + kCamErrorDim * window_position;
}

inline ErrorRange error_index(const FilterState& s, ErrorComponent c, CamId cam_id = -1) {
  switch (c) {
    case ErrorComponent::kOrientation: return {0, 3};
    case ErrorComponent::kGyroBias: return {3, 6};
    case ErrorComponent::kVelocity: return {6, 9};
    case ErrorComponent::kAccelBias: return {9, 12};
    case ErrorComponent::kPosition: return {12, 15};
    case ErrorComponent::kExtrinsicRotation: return {15, 18};
    case ErrorComponent::kExtrinsicTranslation: return {18, 21};
    case ErrorComponent::kCamOrientation:
    case ErrorComponent::kCamPosition: {
      const int pos = cam_position(s, cam_id);
      if (pos < 0) throw StateError("unknown camera id " + std::to_string(cam_id));
      const int off = cam_offset(pos) + (c == ErrorComponent::kCamPosition ? 3 : 0);
      return {off, off + 3};
    }
  }
  throw StateError("unknown error component");
}

inline MatX enforce_symmetry(const MatX& P) {
  return 0.5 * (P + P.transpose());
}

inline void symmetrize_in_place(MatX& P) {
  // In-place (P + Pᵀ)/2 without an aliasing temporary.
  const Eigen::Index n = P.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double m = 0.5 * (P(i, j) + P(j, i));
      P(i, j) = m;
      P(j, i) = m;
    }
  }
}

/// Extrinsic rotation error is defined on ^C_I q in the camera frame:
/// ^C_I q = δq(θ_IC) ⊗ ^C_I q̂. All other orientation errors follow
/// q = δq(θ) ⊗ q̂; vector components are additive.
inline FilterState apply_correction(FilterState s, const VecX& dx) {
  if (dx.size() != s.dim()) {
    throw StateError("correction has dimension " + std::to_string(dx.size()) +
                     ", expected " + std::to_string(s.dim()));
  }
  ImuState& imu = s.imu;
  imu.q_IG = small_angle_quat(dx.segment<3>(index::kTheta)) * imu.q_IG;
  imu.b_g += dx.segment<3>(index::kBg);
  imu.v += dx.segment<3>(index::kV);
  imu.b_a += dx.segment<3>(index::kBa);
  imu.p += dx.segment<3>(index::kP);
  const Quaternion q_CI = small_angle_quat(dx.segment<3>(index::kThetaIC)) * quat_inverse(imu.q_IC);
  imu.q_IC = quat_inverse(q_CI);
  imu.p_IC += dx.segment<3>(index::kPIC);
  for (std::size_t i = 0; i < s.cams.size(); ++i) {
    const int off = cam_offset(static_cast<int>(i));
    CamState& c = s.cams[i];
    c.q_CG = small_angle_quat(dx.segment<3>(off)) * c.q_CG;
    c.p_GC += dx.segment<3>(off + 3);
  }
  return s;
}

inline MatX initial_covariance(const InitialCovariance& c) {
  VecX d(kImuErrorDim);
  d << VecX::Constant(3, c.orientation), VecX::Constant(3, c.gyro_bias),
      VecX::Constant(3, c.velocity), VecX::Constant(3, c.accel_bias),
      VecX::Constant(3, c.position), VecX::Constant(3, c.extrinsic_rotation),
      VecX::Constant(3, c.extrinsic_translation);
  return d.asDiagonal();
}

inline FilterState make_filter_state(const ImuState& imu, const StereoExtrinsics& ext,
                                     const NoiseParams& params,
                                     const InitialCovariance& prior = {}) {
  params.validate();
  if (!(ext.baseline() > 0.0)) throw StateError("stereo baseline must be positive");
  FilterState s;
  s.imu = imu;
  s.imu_null = {imu.q_IG, imu.v, imu.p};
  s.extrinsics = ext;
  s.params = params;
  s.P = initial_covariance(prior);
  return s;
}

/// Static-start bootstrap: gyro bias from the mean rate, roll and pitch from
/// the mean specific force, yaw zero, velocity zero.
template <typename SampleRange>
ImuState initialize_from_static(const SampleRange& samples, const Vec3& gravity,
                                const Quaternion& q_IC, const Vec3& p_IC) {
  Vec3 w_sum = Vec3::Zero();
  Vec3 a_sum = Vec3::Zero();
  std::size_t n = 0;
  double last_t = 0.0;
  for (const auto& s : samples) {
    w_sum += s.omega_m;
    a_sum += s.accel_m;
    last_t = s.timestamp;
    ++n;
  }
  if (n == 0) throw StateError("static initialization needs at least one IMU sample");
  const Vec3 a_mean = a_sum / static_cast<double>(n);
  // At rest a_m = -C(q) g, so C(q) maps the world up direction onto the
  // measured specific force direction.
  const Vec3 up_world = -gravity.normalized();
  const Vec3 up_body = a_mean.normalized();
  // Rotation taking up_world to up_body with zero twist about the axis.
  const Eigen::Quaterniond h = Eigen::Quaterniond::FromTwoVectors(up_world, up_body);
  // h rotates world vectors into body coordinates: C = R(h).
  ImuState imu;
  imu.q_IG = rotation_to_quat(h.toRotationMatrix());
  imu.b_g = w_sum / static_cast<double>(n);
  imu.q_IC = q_IC;
  imu.p_IC = p_IC;
  imu.timestamp = last_t;
  return imu;
}

/// Minimum eigenvalue of the symmetric part of P.
inline double min_eigenvalue(const MatX& P) {
  if (P.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<MatX> es(enforce_symmetry(P), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace smsckf
