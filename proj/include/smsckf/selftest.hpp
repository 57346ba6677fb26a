#pragma once

// Runtime self-checks: analytic Jacobians against central differences,
// the single-observation null-space degeneracy, and the observability
// constraint on random propagation steps.

#include "smsckf/augmentation.hpp"
#include "smsckf/measurement.hpp"
#include "smsckf/propagation.hpp"
#include "smsckf/state.hpp"
#include "smsckf/update.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace smsckf {

struct CheckResult {
  std::string name;
  double worst = 0.0;
  double tolerance = 0.0;
  int trials = 0;
  bool passed() const { return worst <= tolerance; }
};

namespace selftest_detail {

inline Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  const double x = u(rng);
  const double y = u(rng);
  const double z = u(rng);
  return {x, y, z};
}

inline Quaternion random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double x = n(rng), y = n(rng), z = n(rng), w = n(rng);
  return Quaternion(x, y, z, w);
}

inline ImuState random_imu(std::mt19937_64& rng) {
  ImuState s;
  s.q_IG = random_quat(rng);
  s.b_g = random_vec(rng, 0.05);
  s.v = random_vec(rng, 5.0);
  s.b_a = random_vec(rng, 0.2);
  s.p = random_vec(rng, 20.0);
  s.q_IC = random_quat(rng);
  s.p_IC = random_vec(rng, 0.3);
  return s;
}

/// max |A − B| / max(|B|_max, 1).
inline double relative_error(const MatX& A, const MatX& B) {
  return (A - B).cwiseAbs().maxCoeff() / std::max(B.cwiseAbs().maxCoeff(), 1.0);
}

/// Error-state rate of the IMU block (θ, b_g, v, b_a, p, θ_IC, p_IC) at true
/// state `x` relative to the nominal `xh`, both driven by the same readings.
/// The orientation rate uses δq̇ = q̇ ⊗ q̂⁻¹ + q ⊗ (q̂⁻¹)˙ and θ̇ ≈ 2 δq̇_v.
inline VecX error_rate(const ImuState& x, const ImuState& xh, const Vec3& w_m, const Vec3& a_m,
                       const Eigen::Matrix<double, 12, 1>& noise, const Vec3& g) {
  const Vec3 w = w_m - x.b_g - noise.segment<3>(0);
  const Vec3 a = a_m - x.b_a - noise.segment<3>(6);
  const Vec3 wh = w_m - xh.b_g;
  const Vec3 ah = a_m - xh.b_a;
  const ImuDerivative d = nominal_derivative(x, w, a, g);
  const ImuDerivative dh = nominal_derivative(xh, wh, ah, g);

  const Quaternion qh_inv = quat_inverse(xh.q_IG);
  // Raw JPL product; derivative quaternions are not unit length.
  auto mul = [](const Vec4& p, const Vec4& q) {
    Vec4 r;
    const Vec3 pv = p.head<3>(), qv = q.head<3>();
    r.head<3>() = p(3) * qv + q(3) * pv - pv.cross(qv);
    r(3) = p(3) * q(3) - pv.dot(qv);
    return r;
  };
  const Vec4 qh_inv_c = qh_inv.coeffs();
  const Vec4 qh_inv_dot = -mul(mul(qh_inv_c, dh.q_IG), qh_inv_c);
  const Vec4 dq_dot = mul(d.q_IG, qh_inv_c) + mul(x.q_IG.coeffs(), qh_inv_dot);

  VecX r = VecX::Zero(kImuErrorDim);
  r.segment<3>(index::kTheta) = 2.0 * dq_dot.head<3>();
  r.segment<3>(index::kBg) = noise.segment<3>(3);
  r.segment<3>(index::kV) = d.v - dh.v;
  r.segment<3>(index::kBa) = noise.segment<3>(9);
  r.segment<3>(index::kP) = d.p - dh.p;
  return r;
}

inline ImuState perturb(const ImuState& x, const VecX& dx) {
  FilterState s;
  s.imu = x;
  return apply_correction(std::move(s), dx).imu;
}

inline Eigen::Matrix<double, 6, 1> camera_error(const CameraPose& truth, const CameraPose& est) {
  Eigen::Matrix<double, 6, 1> e;
  e << quat_error(truth.q_CG, est.q_CG), truth.p_GC - est.p_GC;
  return e;
}

}  // namespace selftest_detail

/// F and G against central differences of the error-state rate.
inline CheckResult check_process_jacobians(int trials, std::uint64_t seed, double h = 1e-6) {
  using namespace selftest_detail;
  std::mt19937_64 rng(seed);
  CheckResult res{"process Jacobians F, G", 0.0, 1e-5, trials};
  const Vec3 g(0.0, 0.0, -9.81);
  const Eigen::Matrix<double, 12, 1> zero_noise = Eigen::Matrix<double, 12, 1>::Zero();
  for (int k = 0; k < trials; ++k) {
    const ImuState xh = random_imu(rng);
    const Vec3 w_m = random_vec(rng, 2.0);
    const Vec3 a_m = random_vec(rng, 12.0);
    const auto [F, G] = continuous_jacobians(xh, w_m - xh.b_g, a_m - xh.b_a);
    MatX Fn(kImuErrorDim, kImuErrorDim), Gn(kImuErrorDim, kNoiseDim);
    for (int j = 0; j < kImuErrorDim; ++j) {
      VecX dx = VecX::Zero(kImuErrorDim);
      dx(j) = h;
      const VecX fp = error_rate(perturb(xh, dx), xh, w_m, a_m, zero_noise, g);
      const VecX fm = error_rate(perturb(xh, -dx), xh, w_m, a_m, zero_noise, g);
      Fn.col(j) = (fp - fm) / (2.0 * h);
    }
    for (int j = 0; j < kNoiseDim; ++j) {
      Eigen::Matrix<double, 12, 1> n = zero_noise;
      n(j) = h;
      const VecX fp = error_rate(xh, xh, w_m, a_m, n, g);
      const VecX fm = error_rate(xh, xh, w_m, a_m, -n, g);
      Gn.col(j) = (fp - fm) / (2.0 * h);
    }
    res.worst = std::max({res.worst, relative_error(MatX(F), Fn), relative_error(MatX(G), Gn)});
  }
  return res;
}

/// Camera-pose Jacobian of augmentation against central differences.
inline CheckResult check_augmentation_jacobian(int trials, std::uint64_t seed, double h = 1e-6) {
  using namespace selftest_detail;
  std::mt19937_64 rng(seed);
  CheckResult res{"augmentation Jacobian J_I", 0.0, 1e-5, trials};
  for (int k = 0; k < trials; ++k) {
    const ImuState xh = random_imu(rng);
    const CameraPose ch = camera_pose_from_imu(xh);
    MatX Jn(kCamErrorDim, kImuErrorDim);
    for (int j = 0; j < kImuErrorDim; ++j) {
      VecX dx = VecX::Zero(kImuErrorDim);
      dx(j) = h;
      const auto ep = camera_error(camera_pose_from_imu(perturb(xh, dx)), ch);
      const auto em = camera_error(camera_pose_from_imu(perturb(xh, -dx)), ch);
      Jn.col(j) = (ep - em) / (2.0 * h);
    }
    res.worst = std::max(res.worst, relative_error(MatX(augmentation_jacobian_imu(xh)), Jn));
  }
  return res;
}

/// H_C and H_f against central differences of the stereo projection.
inline CheckResult check_measurement_jacobians(int trials, std::uint64_t seed, double h = 1e-6) {
  using namespace selftest_detail;
  std::mt19937_64 rng(seed);
  CheckResult res{"measurement Jacobians H_C, H_f", 0.0, 1e-5, trials};
  std::uniform_real_distribution<double> depth(2.0, 20.0);
  StereoExtrinsics ext;
  for (int k = 0; k < trials; ++k) {
    ext.q_C2C1 = small_angle_quat(random_vec(rng, 0.05));
    ext.p_C1C2 = Vec3(0.2, 0.0, 0.0) + random_vec(rng, 0.01);
    CamState cam;
    cam.q_CG = random_quat(rng);
    cam.p_GC = random_vec(rng, 10.0);
    const double zc = depth(rng);
    const Vec3 lateral = random_vec(rng, 0.5 * zc);
    const Vec3 p_C(lateral.x(), lateral.y(), zc);
    const Vec3 p_G = quat_to_rotation(cam.q_CG).transpose() * p_C + cam.p_GC;
    const auto J = measurement_jacobians(cam, ext, p_G);
    auto z = [&](const CamState& c, const Vec3& f) {
      const auto sp = transform_feature(f, c, ext);
      return predict_measurement(sp.p_C1, sp.p_C2);
    };
    MatX Hc(4, 6), Hf(4, 3);
    for (int j = 0; j < 6; ++j) {
      Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
      d(j) = h;
      CamState cp = cam, cm = cam;
      cp.q_CG = small_angle_quat(d.head<3>()) * cam.q_CG;
      cp.p_GC = cam.p_GC + d.tail<3>();
      cm.q_CG = small_angle_quat(-d.head<3>()) * cam.q_CG;
      cm.p_GC = cam.p_GC - d.tail<3>();
      Hc.col(j) = (z(cp, p_G) - z(cm, p_G)) / (2.0 * h);
    }
    for (int j = 0; j < 3; ++j) {
      const Vec3 d = Vec3::Unit(j) * h;
      Hf.col(j) = (z(cam, p_G + d) - z(cam, p_G - d)) / (2.0 * h);
    }
    res.worst = std::max({res.worst, relative_error(MatX(J.H_C), Hc), relative_error(MatX(J.H_f), Hf)});
  }
  return res;
}

/// A single stereo observation carries no information on the camera pose
/// once the feature is projected out: ‖VᵀH_C‖ ≤ 1e-9‖H_C‖.
inline CheckResult check_single_observation_degeneracy(int trials, std::uint64_t seed) {
  using namespace selftest_detail;
  std::mt19937_64 rng(seed);
  CheckResult res{"single stereo observation null space", 0.0, 1e-9, trials};
  std::uniform_real_distribution<double> depth(1.0, 30.0);
  StereoExtrinsics ext;
  for (int k = 0; k < trials; ++k) {
    CamState cam;
    cam.q_CG = random_quat(rng);
    cam.p_GC = random_vec(rng, 10.0);
    const double zc = depth(rng);
    const Vec3 lateral = random_vec(rng, 0.8 * zc);
    const Vec3 p_C(lateral.x(), lateral.y(), zc);
    const Vec3 p_G = quat_to_rotation(cam.q_CG).transpose() * p_C + cam.p_GC;
    const auto J = measurement_jacobians(cam, ext, p_G);
    const MatX V = left_null_space(MatX(J.H_f));
    const double ratio = (V.transpose() * J.H_C).norm() / J.H_C.norm();
    res.worst = std::max(res.worst, ratio);
  }
  return res;
}

/// ‖Φ* N_k − N_{k+1}‖_F over random propagation steps.
inline CheckResult check_observability_constraint(int trials, std::uint64_t seed) {
  using namespace selftest_detail;
  std::mt19937_64 rng(seed);
  CheckResult res{"observability-constrained transition", 0.0, 1e-8, trials};
  for (int k = 0; k < trials; ++k) {
    FilterState s = make_filter_state(random_imu(rng), StereoExtrinsics{}, NoiseParams{});
    s.imu_null = {random_quat(rng), random_vec(rng, 5.0), random_vec(rng, 20.0)};
    const ImuSample s0{0.0, random_vec(rng, 2.0), random_vec(rng, 12.0)};
    const ImuSample s1{0.005, s0.omega_m + random_vec(rng, 0.1), s0.accel_m + random_vec(rng, 0.5)};
    const PropagationInfo info = propagate_in_place(s, s0, s1);
    res.worst = std::max(res.worst, info.observability_residual);
  }
  return res;
}

inline std::vector<CheckResult> run_selftest(std::uint64_t seed = 7, int trials = 100) {
  return {check_process_jacobians(trials, seed), check_augmentation_jacobian(trials, seed + 1),
          check_measurement_jacobians(trials, seed + 2),
          check_single_observation_degeneracy(10 * trials, seed + 3),
          check_observability_constraint(trials, seed + 4)};
}

}  // namespace smsckf
