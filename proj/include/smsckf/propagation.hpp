#pragma once

// IMU process model: nominal integration, error-state Jacobians, their
// discretization and the observability-constrained covariance propagation.

#include "smsckf/geometry.hpp"
#include "smsckf/state.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace smsckf {

using Mat21 = Eigen::Matrix<double, kImuErrorDim, kImuErrorDim>;
using Mat21x12 = Eigen::Matrix<double, kImuErrorDim, kNoiseDim>;
using Mat21x4 = Eigen::Matrix<double, kImuErrorDim, 4>;

struct ImuSample {
  double timestamp = 0.0;
  Vec3 omega_m = Vec3::Zero();
  Vec3 accel_m = Vec3::Zero();
};

/// Linear interpolation of two samples at time t.
inline ImuSample interpolate(const ImuSample& a, const ImuSample& b, double t) {
  const double s = (t - a.timestamp) / (b.timestamp - a.timestamp);
  return {t, a.omega_m + s * (b.omega_m - a.omega_m),
          a.accel_m + s * (b.accel_m - a.accel_m)};
}

struct ImuDerivative {
  Vec4 q_IG = Vec4::Zero();
  Vec3 b_g = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
  Vec3 p = Vec3::Zero();
  Vec4 q_IC = Vec4::Zero();
  Vec3 p_IC = Vec3::Zero();
};

/// Continuous nominal dynamics for bias-compensated rate and specific force.
inline ImuDerivative nominal_derivative(const ImuState& imu, const Vec3& w_hat,
                                        const Vec3& a_hat, const Vec3& gravity) {
  ImuDerivative d;
  d.q_IG = quat_derivative(imu.q_IG, w_hat);
  d.v = quat_to_rotation(imu.q_IG).transpose() * a_hat + gravity;
  d.p = imu.v;
  return d;
}

struct TransitionPair {
  Mat21 Phi;
  Mat21 Qk;
};

class PropagationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct KinematicState {
  Vec4 q;
  Vec3 v;
  Vec3 p;
};

inline KinematicState kinematic_rate(const KinematicState& x, const Vec3& w_hat,
                                     const Vec3& a_hat, const Vec3& g) {
  const Quaternion qn(x.q);
  return {0.5 * omega_matrix(w_hat) * x.q,
          quat_to_rotation(qn).transpose() * a_hat + g, x.v};
}

inline KinematicState axpy(const KinematicState& x, double h, const KinematicState& k) {
  return {x.q + h * k.q, x.v + h * k.v, x.p + h * k.p};
}

}  // namespace detail

/// Fourth-order Runge-Kutta step of the nominal dynamics between two IMU
/// samples, inputs linearly interpolated at the midpoint.
inline ImuState rk4_step(const ImuState& state, const ImuSample& s0, const ImuSample& s1,
                         const Vec3& gravity) {
  const double dt = s1.timestamp - s0.timestamp;
  if (!(dt > 0.0)) {
    throw PropagationError("non-positive IMU step dt = " + std::to_string(dt));
  }
  const Vec3 w0 = s0.omega_m - state.b_g;
  const Vec3 w1 = s1.omega_m - state.b_g;
  const Vec3 a0 = s0.accel_m - state.b_a;
  const Vec3 a1 = s1.accel_m - state.b_a;
  const Vec3 wm = 0.5 * (w0 + w1);
  const Vec3 am = 0.5 * (a0 + a1);

  using detail::axpy;
  using detail::kinematic_rate;
  const detail::KinematicState x{state.q_IG.coeffs(), state.v, state.p};
  const auto k1 = kinematic_rate(x, w0, a0, gravity);
  const auto k2 = kinematic_rate(axpy(x, 0.5 * dt, k1), wm, am, gravity);
  const auto k3 = kinematic_rate(axpy(x, 0.5 * dt, k2), wm, am, gravity);
  const auto k4 = kinematic_rate(axpy(x, dt, k3), w1, a1, gravity);

  ImuState out = state;
  const double h = dt / 6.0;
  out.q_IG = Quaternion(x.q + h * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q));
  out.v = x.v + h * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v);
  out.p = x.p + h * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p);
  out.timestamp = s1.timestamp;
  return out;
}

/// F and G of the linearized error dynamics x̃̇ = F x̃ + G n,
/// n = (n_g, n_wg, n_a, n_wa). Extrinsic rows are zero.
inline std::pair<Mat21, Mat21x12> continuous_jacobians(const ImuState& imu, const Vec3& w_hat,
                                                       const Vec3& a_hat) {
  using namespace index;
  const Mat3 Ct = quat_to_rotation(imu.q_IG).transpose();
  Mat21 F = Mat21::Zero();
  F.block<3, 3>(kTheta, kTheta) = -skew(w_hat);
  F.block<3, 3>(kTheta, kBg) = -Mat3::Identity();
  F.block<3, 3>(kV, kTheta) = -Ct * skew(a_hat);
  F.block<3, 3>(kV, kBa) = -Ct;
  F.block<3, 3>(kP, kV) = Mat3::Identity();

  Mat21x12 G = Mat21x12::Zero();
  G.block<3, 3>(kTheta, 0) = -Mat3::Identity();
  G.block<3, 3>(kBg, 3) = Mat3::Identity();
  G.block<3, 3>(kV, 6) = -Ct;
  G.block<3, 3>(kBa, 9) = Mat3::Identity();
  return {F, G};
}

/// Continuous noise covariance diag(σ_g², σ_wg², σ_a², σ_wa²).
inline Eigen::Matrix<double, kNoiseDim, kNoiseDim> continuous_noise(const NoiseParams& n) {
  Eigen::Matrix<double, kNoiseDim, 1> d;
  d << Vec3::Constant(n.sigma_g * n.sigma_g), Vec3::Constant(n.sigma_wg * n.sigma_wg),
      Vec3::Constant(n.sigma_a * n.sigma_a), Vec3::Constant(n.sigma_wa * n.sigma_wa);
  return d.asDiagonal();
}

/// Φ = I + Fdt + (Fdt)²/2 + (Fdt)³/6 (third-order exponential series).
inline Mat21 transition_matrix(const Mat21& F, double dt) {
  const Mat21 Fdt = F * dt;
  const Mat21 Fdt2 = Fdt * Fdt;
  const Mat21 Fdt3 = Fdt2 * Fdt;
  return Mat21::Identity() + Fdt + 0.5 * Fdt2 + Fdt3 / 6.0;
}

/// Trapezoidal Q_k = ½ dt (Φ G Q Gᵀ Φᵀ + G Q Gᵀ).
inline Mat21 discrete_noise(const Mat21& Phi, const Mat21x12& G, const NoiseParams& params,
                            double dt) {
  const Mat21 GQGt = G * continuous_noise(params) * G.transpose();
  Mat21 Qk = 0.5 * dt * (Phi * GQGt * Phi.transpose() + GQGt);
  return 0.5 * (Qk + Qk.transpose());
}

inline TransitionPair discretize(const Mat21& F, const Mat21x12& G, const NoiseParams& params,
                                 double dt) {
  if (!(dt > 0.0)) {
    throw PropagationError("non-positive discretization step dt = " + std::to_string(dt));
  }
  TransitionPair t;
  t.Phi = transition_matrix(F, dt);
  t.Qk = discrete_noise(t.Phi, G, params, dt);
  return t;
}

/// Basis of the four unobservable directions of the IMU block at a
/// linearization point: three global translations and yaw about gravity.
inline Mat21x4 imu_unobservable_basis(const LinearizationPoint& lp, const Vec3& gravity) {
  using namespace index;
  Mat21x4 N = Mat21x4::Zero();
  N.block<3, 3>(kP, 0) = Mat3::Identity();
  N.block<3, 1>(kTheta, 3) = quat_to_rotation(lp.q) * gravity;
  N.block<3, 1>(kV, 3) = -skew(lp.v) * gravity;
  N.block<3, 1>(kP, 3) = -skew(lp.p) * gravity;
  return N;
}

/// Minimal change to Φ such that Φ* N(anchor) = N(propagated).
///
/// The orientation block becomes C(q_{k+1}) C(q_k)ᵀ; the velocity and
/// position rows then get a rank-one correction of their θ columns,
/// A* = A - (A u - w)(uᵀu)⁻¹uᵀ, with u the θ entries of the yaw column and
/// w whatever the remaining columns leave unexplained.
inline Mat21 enforce_observability(const Mat21& Phi, const LinearizationPoint& anchor,
                                   const LinearizationPoint& propagated, const Vec3& gravity) {
  using namespace index;
  Mat21 out = Phi;
  const Mat21x4 N0 = imu_unobservable_basis(anchor, gravity);
  const Mat21x4 N1 = imu_unobservable_basis(propagated, gravity);
  out.block<3, 3>(kTheta, kTheta) =
      quat_to_rotation(propagated.q) * quat_to_rotation(anchor.q).transpose();

  const Vec3 u = N0.block<3, 1>(kTheta, 3);
  const double uu = u.squaredNorm();
  for (const int row : {kV, kP}) {
    // Contribution of every column except θ to the yaw constraint.
    Vec3 rest = out.block<3, kImuErrorDim>(row, 0) * N0.col(3) -
                out.block<3, 3>(row, kTheta) * u;
    const Vec3 w = N1.block<3, 1>(row, 3) - rest;
    Eigen::Ref<Eigen::Matrix<double, 3, 3>> A = out.block<3, 3>(row, kTheta);
    const Mat3 A_new = A - (A * u - w) * u.transpose() / uu;
    A = A_new;
  }
  return out;
}

/// Frobenius residual ‖Φ N(anchor) − N(propagated)‖.
inline double observability_residual(const Mat21& Phi, const LinearizationPoint& anchor,
                                     const LinearizationPoint& propagated, const Vec3& gravity) {
  return (Phi * imu_unobservable_basis(anchor, gravity) -
          imu_unobservable_basis(propagated, gravity))
      .norm();
}

struct PropagationOptions {
  bool observability_constraint = true;
};

struct PropagationInfo {
  double dt = 0.0;
  double observability_residual = 0.0;
};

/// Advances the nominal state and covariance from s0 to s1 in place.
/// P_II ← Φ P_II Φᵀ + Q_k, P_IC ← Φ P_IC, P_CC untouched.
inline PropagationInfo propagate_in_place(FilterState& s, const ImuSample& s0,
                                          const ImuSample& s1,
                                          const PropagationOptions& opt = {}) {
  const double dt = s1.timestamp - s0.timestamp;
  const Vec3& g = s.params.gravity;
  const Vec3 w_hat = s0.omega_m - s.imu.b_g;
  const Vec3 a_hat = s0.accel_m - s.imu.b_a;
  const auto [F, G] = continuous_jacobians(s.imu, w_hat, a_hat);

  ImuState next = rk4_step(s.imu, s0, s1, g);
  const LinearizationPoint propagated{next.q_IG, next.v, next.p};

  Mat21 Phi = transition_matrix(F, dt);
  if (opt.observability_constraint) {
    Phi = enforce_observability(Phi, s.imu_null, propagated, g);
  }
  const Mat21 Qk = discrete_noise(Phi, G, s.params, dt);

  PropagationInfo info;
  info.dt = dt;
  info.observability_residual = observability_residual(Phi, s.imu_null, propagated, g);

  const int n = s.dim();
  auto P_II = s.P.topLeftCorner<kImuErrorDim, kImuErrorDim>();
  const Mat21 P_II_new = Phi * P_II * Phi.transpose() + Qk;
  P_II = P_II_new;
  if (n > kImuErrorDim) {
    auto P_IC = s.P.topRightCorner(kImuErrorDim, n - kImuErrorDim);
    const MatX P_IC_new = Phi * P_IC;
    P_IC = P_IC_new;
    s.P.bottomLeftCorner(n - kImuErrorDim, kImuErrorDim) = P_IC_new.transpose();
  }
  symmetrize_in_place(s.P);

  s.imu = next;
  s.imu_null = propagated;
  return info;
}

inline FilterState propagate(FilterState s, const ImuSample& s0, const ImuSample& s1,
                             const PropagationOptions& opt = {}) {
  propagate_in_place(s, s0, s1, opt);
  return s;
}

}  // namespace smsckf
