#pragma once

// Trajectory evaluation: time and yaw alignment, RMSE, drift as a fraction
// of travelled distance, and NEES on the (θ, v, p) marginal.

#include "smsckf/geometry.hpp"
#include "smsckf/state.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace smsckf {

struct TrajectoryPoint {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Quaternion q;  // ^I_G q
  Vec3 v = Vec3::Zero();
};

using Trajectory = std::vector<TrajectoryPoint>;

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rigid yaw + translation map p ↦ Rz(yaw) p + translation, applied to
/// estimates stamped t, compared with truth at t + time_offset.
struct AlignmentTransform {
  double yaw = 0.0;
  Vec3 translation = Vec3::Zero();
  double time_offset = 0.0;

  Mat3 rotation() const { return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(); }
  Vec3 apply(const Vec3& p) const { return rotation() * p + translation; }
};

struct AlignmentOptions {
  bool estimate_time_offset = true;
  double search_window = 0.5;  // s
  double search_step = 0.005;  // s, one IMU period at 200 Hz
};

/// Truth linearly interpolated at t; nullopt-like flag when outside.
inline bool interpolate_truth(const Trajectory& truth, double t, TrajectoryPoint& out) {
  if (truth.empty() || t < truth.front().t - 1e-12 || t > truth.back().t + 1e-12) return false;
  auto it = std::lower_bound(truth.begin(), truth.end(), t,
                             [](const TrajectoryPoint& a, double x) { return a.t < x; });
  if (it == truth.end()) it = std::prev(truth.end());
  if (it->t == t || it == truth.begin()) {
    out = *it;
    return true;
  }
  const TrajectoryPoint& b = *it;
  const TrajectoryPoint& a = *std::prev(it);
  const double s = (t - a.t) / (b.t - a.t);
  out.t = t;
  out.p = a.p + s * (b.p - a.p);
  out.v = a.v + s * (b.v - a.v);
  // Nearest attitude; the truth is sampled far faster than it rotates.
  out.q = s < 0.5 ? a.q : b.q;
  return true;
}

namespace detail {

inline double speed_correlation(const Trajectory& est, const Trajectory& truth, double offset,
                                int& matched) {
  std::vector<double> a, b;
  for (const auto& e : est) {
    TrajectoryPoint tp;
    if (!interpolate_truth(truth, e.t + offset, tp)) continue;
    a.push_back(e.v.norm());
    b.push_back(tp.v.norm());
  }
  matched = static_cast<int>(a.size());
  if (a.size() < 2) return -std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa < 1e-18 || sbb < 1e-18) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

}  // namespace detail

/// Time offset maximizing the speed-profile correlation, then the
/// least-squares yaw and translation on the matched samples.
inline AlignmentTransform align_yaw_position(const Trajectory& est, const Trajectory& truth,
                                             const AlignmentOptions& opt = {}) {
  AlignmentTransform tf;
  if (opt.estimate_time_offset && opt.search_step > 0.0) {
    const int steps = static_cast<int>(std::floor(opt.search_window / opt.search_step + 1e-9));
    double best = -std::numeric_limits<double>::infinity();
    bool informative = false;
    // Offsets visited by increasing magnitude so ties keep the smaller shift.
    for (int k = 0; k <= steps; ++k) {
      for (int sign : {1, -1}) {
        if (k == 0 && sign < 0) continue;
        const double off = sign * k * opt.search_step;
        int matched = 0;
        const double c = detail::speed_correlation(est, truth, off, matched);
        if (std::isnan(c) || matched < 2) continue;
        informative = true;
        if (c > best) {
          best = c;
          tf.time_offset = off;
        }
      }
    }
    if (!informative) tf.time_offset = 0.0;
  }

  std::vector<Vec3> pe, pt;
  for (const auto& e : est) {
    TrajectoryPoint tp;
    if (!interpolate_truth(truth, e.t + tf.time_offset, tp)) continue;
    pe.push_back(e.p);
    pt.push_back(tp.p);
  }
  if (pe.size() < 2) throw EvaluationError("alignment needs at least two overlapping samples");
  Vec3 ce = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < pe.size(); ++i) {
    ce += pe[i];
    ct += pt[i];
  }
  ce /= static_cast<double>(pe.size());
  ct /= static_cast<double>(pt.size());
  double s_cross = 0.0, s_dot = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < pe.size(); ++i) {
    const Vec3 e = pe[i] - ce;
    const Vec3 t = pt[i] - ct;
    s_cross += e.x() * t.y() - e.y() * t.x();
    s_dot += e.x() * t.x() + e.y() * t.y();
    scale += e.head<2>().squaredNorm() + t.head<2>().squaredNorm();
  }
  tf.yaw = std::hypot(s_cross, s_dot) > 1e-12 * std::max(scale, 1e-300) && scale > 1e-18
               ? std::atan2(s_cross, s_dot)
               : 0.0;
  tf.translation = ct - tf.rotation() * ce;
  return tf;
}

inline Trajectory apply_alignment(const Trajectory& est, const AlignmentTransform& tf) {
  Trajectory out = est;
  const Mat3 R = tf.rotation();
  // Attitude: rotating the world by R changes ^I_G q to C(q) Rᵀ.
  for (auto& e : out) {
    e.p = R * e.p + tf.translation;
    e.v = R * e.v;
    e.q = rotation_to_quat(quat_to_rotation(e.q) * R.transpose());
    e.t = e.t + tf.time_offset;
  }
  return out;
}

inline double path_length(const Trajectory& truth, double t0, double t1) {
  double len = 0.0;
  for (std::size_t i = 1; i < truth.size(); ++i) {
    if (truth[i].t < t0 - 1e-12 || truth[i].t > t1 + 1e-12) continue;
    if (truth[i - 1].t < t0 - 1e-12) continue;
    len += (truth[i].p - truth[i - 1].p).norm();
  }
  return len;
}

struct NeesSample {
  double t = 0.0;
  double theta = 0.0;  // 3 dof
  double v = 0.0;      // 3 dof
  double p = 0.0;      // 3 dof
  double total = 0.0;  // 9 dof
};

/// Error e = (θ̃, ṽ, p̃) with q_true = δq(θ̃) ⊗ q_est, and NEES eᵀ P⁻¹ e over
/// the matching 9×9 marginal and its 3×3 blocks.
inline NeesSample nees(const TrajectoryPoint& est, const TrajectoryPoint& truth,
                       const Eigen::Matrix<double, 9, 9>& P9) {
  Eigen::Matrix<double, 9, 1> e;
  e << quat_error(truth.q, est.q), truth.v - est.v, truth.p - est.p;
  NeesSample s;
  s.t = est.t;
  auto quad = [](const auto& cov, const auto& err) {
    const Eigen::MatrixXd c = cov;
    const Eigen::VectorXd x = err;
    return x.dot(c.ldlt().solve(x));
  };
  s.theta = quad(P9.block<3, 3>(0, 0), Vec3(e.segment<3>(0)));
  s.v = quad(P9.block<3, 3>(3, 3), Vec3(e.segment<3>(3)));
  s.p = quad(P9.block<3, 3>(6, 6), Vec3(e.segment<3>(6)));
  s.total = quad(P9, Eigen::VectorXd(e));
  return s;
}

/// 9×9 (θ, v, p) marginal of the filter covariance.
inline Eigen::Matrix<double, 9, 9> pose_velocity_marginal(const MatX& P) {
  const int idx[3] = {index::kTheta, index::kV, index::kP};
  Eigen::Matrix<double, 9, 9> M;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      M.block<3, 3>(3 * a, 3 * b) = P.block<3, 3>(idx[a], idx[b]);
    }
  }
  return M;
}

struct RunMetrics {
  double rmse_xy = 0.0;
  double rmse_xyz = 0.0;
  double final_drift = 0.0;
  double path_length = 0.0;
  double drift_fraction = 0.0;
  std::size_t matched = 0;
};

/// Errors of an aligned estimate against truth at matching times.
inline RunMetrics compute_metrics(const Trajectory& aligned, const Trajectory& truth) {
  RunMetrics m;
  double sxy = 0.0, sxyz = 0.0;
  TrajectoryPoint last_truth;
  const TrajectoryPoint* last_est = nullptr;
  for (const auto& e : aligned) {
    TrajectoryPoint tp;
    if (!interpolate_truth(truth, e.t, tp)) continue;
    const Vec3 d = e.p - tp.p;
    sxy += d.head<2>().squaredNorm();
    sxyz += d.squaredNorm();
    ++m.matched;
    last_truth = tp;
    last_est = &e;
  }
  if (m.matched == 0) throw EvaluationError("no overlapping samples between estimate and truth");
  m.rmse_xy = std::sqrt(sxy / static_cast<double>(m.matched));
  m.rmse_xyz = std::sqrt(sxyz / static_cast<double>(m.matched));
  m.final_drift = (last_est->p - last_truth.p).norm();
  m.path_length = path_length(truth, aligned.front().t, last_est->t);
  m.drift_fraction = m.path_length > 0.0 ? m.final_drift / m.path_length : 0.0;
  return m;
}

}  // namespace smsckf
