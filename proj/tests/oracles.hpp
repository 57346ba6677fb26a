#pragma once

// Reference computations kept independent of the library code paths they
// check: axis-angle rotations, central differences, dense Kalman updates
// and random generators.

#include "smsckf/geometry.hpp"
#include "smsckf/state.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>

namespace oracle {

using smsckf::Mat3;
using smsckf::MatX;
using smsckf::Vec3;
using smsckf::VecX;

/// Passive rotation matrix for a frame rotated by `angle` about unit `axis`:
/// maps vectors from the original frame into the rotated one.
inline Mat3 axis_angle_matrix(const Vec3& axis, double angle) {
  const Vec3 k = axis.normalized();
  Mat3 K;
  K << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return std::cos(angle) * Mat3::Identity() - std::sin(angle) * K +
         (1.0 - std::cos(angle)) * k * k.transpose();
}

/// Central-difference Jacobian of f: R^n → R^m at x.
inline MatX central_difference(const std::function<VecX(const VecX&)>& f, const VecX& x,
                               double h = 1e-6) {
  const VecX f0 = f(x);
  MatX J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    VecX xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// max |A − B| / max(|B|_max, 1).
inline double relative_error(const MatX& A, const MatX& B) {
  return (A - B).cwiseAbs().maxCoeff() / std::max(B.cwiseAbs().maxCoeff(), 1.0);
}

/// Textbook Kalman step with explicit inverse and the short covariance form.
inline std::pair<VecX, MatX> dense_update(const MatX& P, const MatX& H, const VecX& r, double sigma) {
  const MatX S = H * P * H.transpose() + sigma * sigma * MatX::Identity(H.rows(), H.rows());
  const MatX K = P * H.transpose() * S.inverse();
  const MatX I = MatX::Identity(P.rows(), P.cols());
  return {K * r, (I - K * H) * P};
}

struct Random {
  explicit Random(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }

  Vec3 vec(double scale) {
    const double x = uniform(-scale, scale);
    const double y = uniform(-scale, scale);
    const double z = uniform(-scale, scale);
    return {x, y, z};
  }

  smsckf::Quaternion quat() {
    const double x = normal(), y = normal(), z = normal(), w = normal();
    return {x, y, z, w};
  }

  MatX spd(int n, double scale = 1.0) {
    MatX A(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) A(i, j) = normal();
    }
    return scale * (A * A.transpose() / n + 0.1 * MatX::Identity(n, n));
  }

  MatX matrix(int r, int c) {
    MatX A(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) A(i, j) = normal();
    }
    return A;
  }

  smsckf::ImuState imu() {
    smsckf::ImuState s;
    s.q_IG = quat();
    s.b_g = vec(0.05);
    s.v = vec(5.0);
    s.b_a = vec(0.2);
    s.p = vec(20.0);
    s.q_IC = quat();
    s.p_IC = vec(0.3);
    return s;
  }

  std::mt19937_64 rng;
};

}  // namespace oracle
