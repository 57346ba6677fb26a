#pragma once

// Stereo measurement model: feature frame transforms, projection, the
// measurement Jacobians and the structureless triangulation.

#include "smsckf/geometry.hpp"
#include "smsckf/state.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace smsckf {

using FeatureId = std::int64_t;
using Vec4d = Eigen::Vector4d;
using Mat4x6 = Eigen::Matrix<double, 4, 6>;
using Mat4x3 = Eigen::Matrix<double, 4, 3>;

inline constexpr double kDefaultDepthFloor = 0.01;

/// (u1, v1, u2, v2) in normalized image coordinates of the left and right camera.
struct StereoObservation {
  CamId cam_id = 0;
  Vec4d z = Vec4d::Zero();
};

struct FeatureTrack {
  FeatureId feature_id = 0;
  std::vector<StereoObservation> observations;
};

class BehindCameraError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StereoPoint {
  Vec3 p_C1;
  Vec3 p_C2;
};

/// Feature position in the left and right camera frames of one camera state.
inline StereoPoint transform_feature(const Vec3& p_G, const Quaternion& q_CG, const Vec3& p_GC,
                                     const StereoExtrinsics& ext) {
  const Vec3 p_C1 = quat_to_rotation(q_CG) * (p_G - p_GC);
  const Vec3 p_C2 = quat_to_rotation(ext.q_C2C1) * (p_C1 - ext.p_C1C2);
  return {p_C1, p_C2};
}

inline StereoPoint transform_feature(const Vec3& p_G, const CamState& cam,
                                     const StereoExtrinsics& ext) {
  return transform_feature(p_G, cam.q_CG, cam.p_GC, ext);
}

/// Right-camera world pose, used as the independent path in tests and by the simulator.
inline std::pair<Quaternion, Vec3> right_camera_pose(const Quaternion& q_CG, const Vec3& p_GC,
                                                     const StereoExtrinsics& ext) {
  return {ext.q_C2C1 * q_CG, p_GC + quat_to_rotation(q_CG).transpose() * ext.p_C1C2};
}

inline Vec4d predict_measurement(const Vec3& p_C1, const Vec3& p_C2,
                                 double depth_floor = kDefaultDepthFloor) {
  if (!(p_C1.z() > depth_floor) || !(p_C2.z() > depth_floor)) {
    throw BehindCameraError("feature depth below floor");
  }
  return {p_C1.x() / p_C1.z(), p_C1.y() / p_C1.z(), p_C2.x() / p_C2.z(), p_C2.y() / p_C2.z()};
}

struct MeasurementJacobians {
  Mat4x6 H_C;  // w.r.t. (θ_C, p_C) of the left camera state
  Mat4x3 H_f;  // w.r.t. ^G p_j
};

/// Chain-rule Jacobians of the stereo measurement at (cam pose, p_G).
/// The right-camera projection block uses the right-camera depth in every
/// denominator.
inline MeasurementJacobians measurement_jacobians(const Quaternion& q_CG, const Vec3& p_GC,
                                                  const StereoExtrinsics& ext,
                                                  const Vec3& p_G) {
  const Mat3 C_CG = quat_to_rotation(q_CG);
  const Mat3 R_21 = quat_to_rotation(ext.q_C2C1);
  const auto [p1, p2] = transform_feature(p_G, q_CG, p_GC, ext);

  Mat4x3 dz_dp1 = Mat4x3::Zero();
  dz_dp1(0, 0) = 1.0 / p1.z();
  dz_dp1(1, 1) = 1.0 / p1.z();
  dz_dp1(0, 2) = -p1.x() / (p1.z() * p1.z());
  dz_dp1(1, 2) = -p1.y() / (p1.z() * p1.z());

  Mat4x3 dz_dp2 = Mat4x3::Zero();
  dz_dp2(2, 0) = 1.0 / p2.z();
  dz_dp2(3, 1) = 1.0 / p2.z();
  dz_dp2(2, 2) = -p2.x() / (p2.z() * p2.z());
  dz_dp2(3, 2) = -p2.y() / (p2.z() * p2.z());

  Eigen::Matrix<double, 3, 6> dp1_dx;
  dp1_dx << skew(p1), -C_CG;
  const Mat3 dp1_df = C_CG;
  const Eigen::Matrix<double, 3, 6> dp2_dx = R_21 * dp1_dx;
  const Mat3 dp2_df = R_21 * C_CG;

  return {dz_dp1 * dp1_dx + dz_dp2 * dp2_dx, dz_dp1 * dp1_df + dz_dp2 * dp2_df};
}

inline MeasurementJacobians measurement_jacobians(const CamState& cam, const StereoExtrinsics& ext,
                                                  const Vec3& p_G) {
  return measurement_jacobians(cam.q_CG, cam.p_GC, ext, p_G);
}

// ---------------------------------------------------------------------------
// Triangulation

struct TriangulationConfig {
  int max_iterations = 20;
  double step_tolerance = 1e-8;
  double min_depth = 0.1;         // m, in the anchor frame
  double max_rms_sigmas = 5.0;    // rms reprojection bound in units of sigma_im
  double sigma_im = 1.0 / 480.0;
  double min_ray_conditioning = 1e-10;
};

enum class TriangulationStatus {
  kOk,
  kTooFewObservations,
  kDegenerateGeometry,
  kNotConverged,
  kBadDepth,
  kLargeResidual,
};

inline const char* to_string(TriangulationStatus s) {
  switch (s) {
    case TriangulationStatus::kOk: return "ok";
    case TriangulationStatus::kTooFewObservations: return "too_few_observations";
    case TriangulationStatus::kDegenerateGeometry: return "degenerate_geometry";
    case TriangulationStatus::kNotConverged: return "not_converged";
    case TriangulationStatus::kBadDepth: return "bad_depth";
    case TriangulationStatus::kLargeResidual: return "large_residual";
  }
  return "unknown";
}

struct TriangulationResult {
  Vec3 p_G = Vec3::Zero();
  double rms_reprojection = 0.0;
  bool converged = false;
  int iterations = 0;
  TriangulationStatus status = TriangulationStatus::kTooFewObservations;
};

namespace detail {

// One monocular view of the anchor-frame point: p_view = R p_A + t.
struct AnchoredView {
  Mat3 R;
  Vec3 t;
  Eigen::Vector2d z;
};

inline std::vector<AnchoredView> anchored_views(std::span<const StereoObservation> obs,
                                                std::span<const CamState> cams,
                                                const StereoExtrinsics& ext, Mat3& C_AG,
                                                Vec3& p_GA) {
  std::vector<AnchoredView> views;
  const Mat3 R_21 = quat_to_rotation(ext.q_C2C1);
  bool have_anchor = false;
  for (const StereoObservation& o : obs) {
    const CamState* cam = nullptr;
    for (const CamState& c : cams) {
      if (c.id == o.cam_id) {
        cam = &c;
        break;
      }
    }
    if (cam == nullptr) continue;
    const Mat3 C_i = quat_to_rotation(cam->q_CG);
    if (!have_anchor) {
      C_AG = C_i;
      p_GA = cam->p_GC;
      have_anchor = true;
    }
    const Mat3 R_iA = C_i * C_AG.transpose();
    const Vec3 t_iA = C_i * (p_GA - cam->p_GC);
    views.push_back({R_iA, t_iA, o.z.head<2>()});
    views.push_back({R_21 * R_iA, R_21 * (t_iA - ext.p_C1C2), o.z.tail<2>()});
  }
  return views;
}

inline double reprojection_cost(const std::vector<AnchoredView>& views, const Vec3& x,
                                bool& valid) {
  double cost = 0.0;
  valid = true;
  const Vec3 ray(x.x(), x.y(), 1.0);
  for (const AnchoredView& v : views) {
    const Vec3 h = v.R * ray + x.z() * v.t;
    if (!(h.z() > 0.0)) valid = false;
    const Eigen::Vector2d e = v.z - h.head<2>() / h.z();
    cost += e.squaredNorm();
  }
  return cost;
}

}  // namespace detail

/// Least-squares feature position from every observation of the track in
/// both cameras. Parameters are inverse-depth (α, β, ρ) = (X/Z, Y/Z, 1/Z)
/// in the first observing left camera; Gauss-Newton with Levenberg damping
/// when a step fails to decrease the cost.
inline TriangulationResult triangulate(std::span<const StereoObservation> obs,
                                       std::span<const CamState> cams,
                                       const StereoExtrinsics& ext,
                                       const TriangulationConfig& cfg = {}) {
  TriangulationResult res;
  Mat3 C_AG = Mat3::Identity();
  Vec3 p_GA = Vec3::Zero();
  const auto views = detail::anchored_views(obs, cams, ext, C_AG, p_GA);
  if (views.size() < 2) return res;

  // Multi-ray midpoint initialization in the anchor frame.
  Mat3 A = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (const auto& v : views) {
    const Vec3 d = (v.R.transpose() * Vec3(v.z.x(), v.z.y(), 1.0)).normalized();
    const Vec3 c = -v.R.transpose() * v.t;
    const Mat3 M = Mat3::Identity() - d * d.transpose();
    A += M;
    b += M * c;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(A);
  const Vec3 ev = es.eigenvalues();
  if (!(ev(0) > cfg.min_ray_conditioning * ev(2))) {
    res.status = TriangulationStatus::kDegenerateGeometry;
    return res;
  }
  const Vec3 p0 = A.ldlt().solve(b);
  if (!(p0.z() > 0.0)) {
    res.status = TriangulationStatus::kBadDepth;
    return res;
  }
  Vec3 x(p0.x() / p0.z(), p0.y() / p0.z(), 1.0 / p0.z());

  bool valid = true;
  double cost = detail::reprojection_cost(views, x, valid);
  double lambda = 0.0;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    res.iterations = it + 1;
    Mat3 JtJ = Mat3::Zero();
    Vec3 Jtr = Vec3::Zero();
    const Vec3 ray(x.x(), x.y(), 1.0);
    for (const auto& v : views) {
      const Vec3 h = v.R * ray + x.z() * v.t;
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << 1.0 / h.z(), 0.0, -h.x() / (h.z() * h.z()),
               0.0, 1.0 / h.z(), -h.y() / (h.z() * h.z());
      Mat3 dh;
      dh << v.R.col(0), v.R.col(1), v.t;
      const Eigen::Matrix<double, 2, 3> J = dproj * dh;
      const Eigen::Vector2d e = v.z - h.head<2>() / h.z();
      JtJ += J.transpose() * J;
      Jtr += J.transpose() * e;
    }
    Eigen::JacobiSVD<Mat3> svd(JtJ);
    const Vec3 sv = svd.singularValues();
    if (!(sv(2) > 1e-14 * sv(0))) {
      res.status = TriangulationStatus::kDegenerateGeometry;
      return res;
    }

    // Try the Gauss-Newton step; fall back to increasing damping.
    bool accepted = false;
    Vec3 step = Vec3::Zero();
    for (int attempt = 0; attempt < 10; ++attempt) {
      Mat3 M = JtJ;
      M.diagonal() *= (1.0 + lambda);
      step = M.ldlt().solve(Jtr);
      bool cand_valid = true;
      const double cand = detail::reprojection_cost(views, x + step, cand_valid);
      if (cand_valid && cand <= cost) {
        x += step;
        cost = cand;
        valid = true;
        lambda *= 0.1;
        if (lambda < 1e-12) lambda = 0.0;
        accepted = true;
        break;
      }
      lambda = lambda == 0.0 ? 1e-4 : lambda * 10.0;
    }
    if (!accepted || step.norm() < cfg.step_tolerance) {
      res.converged = accepted || step.norm() < cfg.step_tolerance;
      break;
    }
  }

  res.p_G = C_AG.transpose() * (Vec3(x.x(), x.y(), 1.0) / x.z()) + p_GA;
  res.rms_reprojection = std::sqrt(cost / (2.0 * static_cast<double>(views.size())));
  // Returning after the iteration cap counts as converged only if the last
  // step was already small; otherwise the loop above reports failure.
  if (!res.converged) {
    res.status = TriangulationStatus::kNotConverged;
    return res;
  }
  if (!valid || !(x.z() > 0.0) || 1.0 / x.z() < cfg.min_depth) {
    res.status = TriangulationStatus::kBadDepth;
    res.converged = false;
    return res;
  }
  if (res.rms_reprojection > cfg.max_rms_sigmas * cfg.sigma_im) {
    res.status = TriangulationStatus::kLargeResidual;
    res.converged = false;
    return res;
  }
  res.status = TriangulationStatus::kOk;
  return res;
}

inline TriangulationResult triangulate(const FeatureTrack& track, std::span<const CamState> cams,
                                       const StereoExtrinsics& ext,
                                       const TriangulationConfig& cfg = {}) {
  return triangulate(std::span<const StereoObservation>(track.observations), cams, ext, cfg);
}

}  // namespace smsckf
