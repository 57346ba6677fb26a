#pragma once

#include "smsckf/geometry.hpp"
#include "smsckf/state.hpp"

#include <Eigen/Dense>

#include <string>
#include <utility>

namespace smsckf {

using Mat6x21 = Eigen::Matrix<double, kCamErrorDim, kImuErrorDim>;

struct CameraPose {
  Quaternion q_CG;
  Vec3 p_GC;
};

/// Left-camera pose implied by the IMU pose and the camera-IMU extrinsics:
/// ^C_G q = ^C_I q ⊗ ^I_G q,  ^G p_C = ^G p_I + C(^I_G q)ᵀ ^I p_C.
inline CameraPose camera_pose_from_imu(const ImuState& imu) {
  return {quat_inverse(imu.q_IC) * imu.q_IG,
          imu.p + quat_to_rotation(imu.q_IG).transpose() * imu.p_IC};
}

/// J_I = ∂(θ_C, p_C)/∂x̃_I. Columns over (b_g, v, b_a) are zero.
///
///   θ_C = C(^C_I q) θ_I + θ_IC
///   p_C = p̃_I − C(^I_G q)ᵀ⌊^I p_C×⌋ θ_I + C(^I_G q)ᵀ p̃_IC
inline Mat6x21 augmentation_jacobian_imu(const ImuState& imu) {
  using namespace index;
  const Mat3 C_IG = quat_to_rotation(imu.q_IG);
  const Mat3 C_CI = quat_to_rotation(imu.q_IC).transpose();
  Mat6x21 J = Mat6x21::Zero();
  J.block<3, 3>(0, kTheta) = C_CI;
  J.block<3, 3>(0, kThetaIC) = Mat3::Identity();
  J.block<3, 3>(3, kTheta) = -C_IG.transpose() * skew(imu.p_IC);
  J.block<3, 3>(3, kP) = Mat3::Identity();
  J.block<3, 3>(3, kPIC) = C_IG.transpose();
  return J;
}

/// J = (J_I | 0_{6×6N}).
inline MatX augmentation_jacobian(const ImuState& imu, int window_size) {
  MatX J = MatX::Zero(kCamErrorDim, kImuErrorDim + kCamErrorDim * window_size);
  J.leftCols<kImuErrorDim>() = augmentation_jacobian_imu(imu);
  return J;
}

/// Appends the current left-camera pose to the window and grows P by the
/// congruence (I; J) P (I; J)ᵀ.
inline void augment_in_place(FilterState& s, double timestamp, std::size_t max_window) {
  if (s.cams.size() >= max_window) {
    throw StateError("camera window already holds " + std::to_string(s.cams.size()) +
                     " states; marginalize before augmenting");
  }
  if (!s.cams.empty() && !(timestamp > s.cams.back().timestamp)) {
    throw StateError("camera timestamps must be strictly increasing");
  }
  const CameraPose pose = camera_pose_from_imu(s.imu);
  CamState cam;
  cam.id = s.next_cam_id++;
  cam.q_CG = pose.q_CG;
  cam.p_GC = pose.p_GC;
  cam.timestamp = timestamp;
  cam.q_CG_null = pose.q_CG;
  cam.p_GC_null = pose.p_GC;

  const int n = s.dim();
  const Mat6x21 J_I = augmentation_jacobian_imu(s.imu);
  // J P only touches the first 21 columns of J.
  const MatX JP = J_I * s.P.topRows<kImuErrorDim>();
  const Eigen::Matrix<double, 6, 6> JPJt = JP.leftCols<kImuErrorDim>() * J_I.transpose();

  s.P.conservativeResize(n + kCamErrorDim, n + kCamErrorDim);
  s.P.block(n, 0, kCamErrorDim, n) = JP;
  s.P.block(0, n, n, kCamErrorDim) = JP.transpose();
  s.P.block<kCamErrorDim, kCamErrorDim>(n, n) = 0.5 * (JPJt + JPJt.transpose());
  s.cams.push_back(cam);
}

inline FilterState augment(FilterState s, double timestamp, std::size_t max_window) {
  augment_in_place(s, timestamp, max_window);
  return s;
}

}  // namespace smsckf
