#pragma once

// Rotation kernel shared by every part of the filter.
//
// Quaternions use the JPL convention with the vector part stored first and
// the scalar last. A quaternion ^A_B q maps B-frame coordinates into frame A
// through C(q), and composition reads left to right:
//
//   C(p ⊗ q) = C(p) C(q),   e.g.  ^C_G q = ^C_I q ⊗ ^I_G q.
//
// docs/frames.md is the normative description of these conventions.

#include <Eigen/Dense>

#include <cmath>

namespace smsckf {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kUnitNormTolerance = 1e-12;

/// Unit quaternion, stored as (x, y, z, w).
class Quaternion {
 public:
  Quaternion() : coeffs_(0.0, 0.0, 0.0, 1.0) {}

  /// Builds a quaternion from raw components and normalizes it.
  Quaternion(double x, double y, double z, double w) : coeffs_(x, y, z, w) {
    normalize();
  }

  /// Raw (x, y, z, w) vector; normalized on construction.
  explicit Quaternion(const Vec4& xyzw) : coeffs_(xyzw) { normalize(); }

  static Quaternion identity() { return {}; }

  double x() const { return coeffs_.x(); }
  double y() const { return coeffs_.y(); }
  double z() const { return coeffs_.z(); }
  double w() const { return coeffs_.w(); }
  Vec3 vec() const { return coeffs_.head<3>(); }
  const Vec4& coeffs() const { return coeffs_; }

  double norm() const { return coeffs_.norm(); }

  /// True when the last construction had to rescale a visibly non-unit input.
  bool was_renormalized() const { return renormalized_; }

 private:
  void normalize() {
    const double n = coeffs_.norm();
    renormalized_ = std::abs(n - 1.0) > kUnitNormTolerance;
    coeffs_ /= n;
    // Pick the w >= 0 hemisphere so the representation is unique.
    if (coeffs_.w() < 0.0) coeffs_ = -coeffs_;
  }

  Vec4 coeffs_;
  bool renormalized_ = false;
};

/// Cross-product matrix: skew(v) * u == v.cross(u).
inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

/// Ω(ω) such that q̇ = ½ Ω(ω) q for a body rate ω and scalar-last q.
inline Mat4 omega_matrix(const Vec3& w) {
  Mat4 m;
  m.topLeftCorner<3, 3>() = -skew(w);
  m.topRightCorner<3, 1>() = w;
  m.bottomLeftCorner<1, 3>() = -w.transpose();
  m(3, 3) = 0.0;
  return m;
}

/// C(q): the rotation matrix taking frame-B coordinates into frame A.
inline Mat3 quat_to_rotation(const Quaternion& q) {
  const Vec3 v = q.vec();
  const double w = q.w();
  return (2.0 * w * w - 1.0) * Mat3::Identity() - 2.0 * w * skew(v) +
         2.0 * v * v.transpose();
}

/// Inverse of quat_to_rotation; the result has w >= 0.
inline Quaternion rotation_to_quat(const Mat3& c) {
  // C_jpl(q) equals the transpose of the Hamilton matrix with the same
  // components, so Eigen's robust extraction can be reused.
  const Eigen::Quaterniond h(Mat3(c.transpose()));
  return {h.x(), h.y(), h.z(), h.w()};
}

inline Quaternion quat_multiply(const Quaternion& p, const Quaternion& q) {
  const Vec3 pv = p.vec();
  const Vec3 qv = q.vec();
  const Vec3 v = p.w() * qv + q.w() * pv - pv.cross(qv);
  const double w = p.w() * q.w() - pv.dot(qv);
  return {v.x(), v.y(), v.z(), w};
}

inline Quaternion operator*(const Quaternion& p, const Quaternion& q) {
  return quat_multiply(p, q);
}

inline Quaternion quat_inverse(const Quaternion& q) {
  return {-q.x(), -q.y(), -q.z(), q.w()};
}

/// Quaternion for the rotation vector θ, exact for any magnitude.
/// C(small_angle_quat(θ)) = I - [θ×] + O(|θ|²).
inline Quaternion small_angle_quat(const Vec3& theta) {
  const double angle = theta.norm();
  if (angle < 1e-12) {
    // sin(a/2)/a -> 1/2; the quadratic cos term is below double precision.
    return {0.5 * theta.x(), 0.5 * theta.y(), 0.5 * theta.z(), 1.0};
  }
  const double s = std::sin(0.5 * angle) / angle;
  return {s * theta.x(), s * theta.y(), s * theta.z(), std::cos(0.5 * angle)};
}

/// Rotation vector of q, inverse of small_angle_quat (angle in [0, π]).
inline Vec3 quat_to_rotation_vector(const Quaternion& q) {
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q.w());
  return v * (angle / s);
}

/// Small-angle error θ̃ with q_true = δq(θ̃) ⊗ q_est.
inline Vec3 quat_error(const Quaternion& q_true, const Quaternion& q_est) {
  return quat_to_rotation_vector(quat_multiply(q_true, quat_inverse(q_est)));
}

/// Time derivative ½ Ω(ω) q, returned as raw (x, y, z, w) components.
inline Vec4 quat_derivative(const Quaternion& q, const Vec3& w) {
  return 0.5 * omega_matrix(w) * q.coeffs();
}

}  // namespace smsckf
