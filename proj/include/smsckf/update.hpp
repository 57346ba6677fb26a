#pragma once

// Measurement update: per-feature linearization, left-null-space projection,
// observability projection, gating, QR compression, the EKF update itself
// and the two-state marginalization policy.

#include "smsckf/chi_square.hpp"
#include "smsckf/geometry.hpp"
#include "smsckf/measurement.hpp"
#include "smsckf/propagation.hpp"
#include "smsckf/state.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace smsckf {

// ---------------------------------------------------------------------------
// Linearization and null-space projection

struct LinearizedFeature {
  MatX H_x;   // 4M × (21+6N)
  MatX H_f;   // 4M × 3
  VecX r;     // 4M
  MatX H_xo;  // (4M-3) × (21+6N)
  VecX r_o;   // 4M-3
};

enum class ProjectionStatus { kOk, kRankDeficient, kUninformative };

/// Stacks the per-observation Jacobians of one feature at p_G. Observations
/// whose camera is no longer in the window are skipped.
inline LinearizedFeature linearize_feature(const FilterState& s,
                                           std::span<const StereoObservation> obs,
                                           const Vec3& p_G, double depth_floor = kDefaultDepthFloor) {
  int m = 0;
  for (const auto& o : obs) {
    if (cam_position(s, o.cam_id) >= 0) ++m;
  }
  LinearizedFeature lf;
  lf.H_x = MatX::Zero(4 * m, s.dim());
  lf.H_f = MatX::Zero(4 * m, 3);
  lf.r = VecX::Zero(4 * m);
  int row = 0;
  for (const auto& o : obs) {
    const int pos = cam_position(s, o.cam_id);
    if (pos < 0) continue;
    const CamState& cam = s.cams[static_cast<std::size_t>(pos)];
    const auto [p1, p2] = transform_feature(p_G, cam, s.extrinsics);
    const Vec4d z_hat = predict_measurement(p1, p2, depth_floor);
    const auto J = measurement_jacobians(cam, s.extrinsics, p_G);
    lf.H_x.block<4, 6>(row, cam_offset(pos)) = J.H_C;
    lf.H_f.block<4, 3>(row, 0) = J.H_f;
    lf.r.segment<4>(row) = o.z - z_hat;
    row += 4;
  }
  return lf;
}

/// r_o = Vᵀ r, H_xo = Vᵀ H_x with V an orthonormal basis of the left null
/// space of H_f, obtained from a full Householder factorization of H_f.
inline ProjectionStatus stack_and_project(LinearizedFeature& lf) {
  const Eigen::Index rows = lf.H_f.rows();
  if (rows <= 3) {
    lf.H_xo = MatX::Zero(0, lf.H_x.cols());
    lf.r_o = VecX::Zero(0);
    return ProjectionStatus::kRankDeficient;
  }
  Eigen::JacobiSVD<MatX> svd(lf.H_f);
  const auto sv = svd.singularValues();
  if (!(sv(2) > 1e-9 * sv(0))) return ProjectionStatus::kRankDeficient;

  Eigen::HouseholderQR<MatX> qr(lf.H_f);
  MatX QtH = qr.householderQ().transpose() * lf.H_x;
  VecX Qtr = qr.householderQ().transpose() * lf.r;
  lf.H_xo = QtH.bottomRows(rows - 3);
  lf.r_o = Qtr.tail(rows - 3);
  if (lf.H_xo.norm() <= 1e-9 * lf.H_x.norm()) return ProjectionStatus::kUninformative;
  return ProjectionStatus::kOk;
}

/// V itself, for tests and diagnostics.
inline MatX left_null_space(const MatX& H_f) {
  Eigen::HouseholderQR<MatX> qr(H_f);
  const MatX Q = qr.householderQ() * MatX::Identity(H_f.rows(), H_f.rows());
  return Q.rightCols(H_f.rows() - H_f.cols());
}

// ---------------------------------------------------------------------------
// Observability

/// Unobservable directions over the full error state, evaluated at the
/// propagation anchor of the IMU and the augmentation-time camera poses.
inline MatX unobservable_basis(const FilterState& s) {
  MatX N = MatX::Zero(s.dim(), 4);
  const Vec3& g = s.params.gravity;
  N.topRows<kImuErrorDim>() = imu_unobservable_basis(s.imu_null, g);
  for (std::size_t i = 0; i < s.cams.size(); ++i) {
    const int off = cam_offset(static_cast<int>(i));
    const CamState& c = s.cams[i];
    N.block<3, 3>(off + 3, 0) = Mat3::Identity();
    N.block<3, 1>(off, 3) = quat_to_rotation(c.q_CG_null) * g;
    N.block<3, 1>(off + 3, 3) = -skew(c.p_GC_null) * g;
  }
  return N;
}

/// H ← H − (H N)(NᵀN)⁻¹Nᵀ, the closest matrix (Frobenius) with H N = 0.
inline MatX observability_project_H(const MatX& H, const MatX& N) {
  const MatX NtN = N.transpose() * N;
  return H - (H * N) * NtN.ldlt().solve(N.transpose());
}

/// Variance of the yaw unobservable direction, nᵀ P n.
inline double yaw_direction_variance(const FilterState& s) {
  const VecX n = unobservable_basis(s).col(3);
  return n.dot(s.P * n);
}

/// Variance of the IMU heading about gravity, (C ĝ)ᵀ P_θθ (C ĝ).
inline double imu_yaw_variance(const FilterState& s) {
  const Vec3 axis = quat_to_rotation(s.imu.q_IG) * s.params.gravity.normalized();
  return axis.dot(s.P.topLeftCorner<3, 3>() * axis);
}

// ---------------------------------------------------------------------------
// Gating, compression and the EKF step

struct GateResult {
  bool accept = false;
  bool singular = false;
  double gamma = 0.0;
  double threshold = 0.0;
  std::size_t dof = 0;
};

/// Mahalanobis test of r_o against H P Hᵀ + σ²I at the 0.95 chi-square quantile.
inline GateResult chi_square_gate(const MatX& H, const VecX& r, const MatX& P, double sigma) {
  GateResult g;
  g.dof = static_cast<std::size_t>(r.size());
  g.threshold = chi_square_95(g.dof);
  if (r.size() == 0) {
    g.accept = true;
    return g;
  }
  MatX S = H * P.selfadjointView<Eigen::Lower>() * H.transpose();
  S.diagonal().array() += sigma * sigma;
  Eigen::LLT<MatX> llt(S);
  if (llt.info() != Eigen::Success) {
    g.singular = true;
    return g;
  }
  g.gamma = r.dot(llt.solve(r));
  g.accept = std::isfinite(g.gamma) && g.gamma <= g.threshold;
  return g;
}

/// Thin QR compression: H = Q₁T, returns (T, Q₁ᵀ r). Pass-through when H has
/// no more rows than columns.
inline std::pair<MatX, VecX> qr_compress(const MatX& H, const VecX& r) {
  if (H.rows() <= H.cols()) return {H, r};
  Eigen::HouseholderQR<MatX> qr(H);
  const Eigen::Index c = H.cols();
  MatX T = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  VecX rt = qr.householderQ().transpose() * r;
  return {std::move(T), rt.head(c)};
}

struct EkfUpdateResult {
  bool applied = false;
  VecX correction;
};

/// Standard EKF step with isotropic noise σ²I and the Joseph covariance form.
inline EkfUpdateResult ekf_update_in_place(FilterState& s, const MatX& H, const VecX& r,
                                           double sigma) {
  EkfUpdateResult out;
  if (H.cols() != s.dim()) {
    throw StateError("measurement Jacobian has " + std::to_string(H.cols()) +
                     " columns, expected " + std::to_string(s.dim()));
  }
  if (H.rows() == 0) return out;
  const double s2 = sigma * sigma;
  const MatX PHt = s.P * H.transpose();
  MatX S = H * PHt;
  S.diagonal().array() += s2;
  Eigen::LLT<MatX> llt(S);
  if (llt.info() != Eigen::Success) return out;
  const MatX K = llt.solve(PHt.transpose()).transpose();
  out.correction = K * r;

  MatX IKH = -K * H;
  IKH.diagonal().array() += 1.0;
  MatX P = IKH * s.P * IKH.transpose();
  P.noalias() += s2 * K * K.transpose();
  symmetrize_in_place(P);
  s = apply_correction(std::move(s), out.correction);
  s.P = std::move(P);
  out.applied = true;
  return out;
}

inline FilterState ekf_update(FilterState s, const MatX& H, const VecX& r, double sigma) {
  ekf_update_in_place(s, H, r, sigma);
  return s;
}

// ---------------------------------------------------------------------------
// Marginalization

struct MotionThresholds {
  double rotation = 0.26;     // rad
  double translation = 0.4;   // m
};

class MarginalizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Picks the two camera states to remove. Each pass looks at the
/// second-latest remaining state and its predecessor: small relative motion
/// removes the second-latest, otherwise the oldest goes. The latest state is
/// never selected.
inline std::array<CamId, 2> select_marginalize(const FilterState& s,
                                               const MotionThresholds& th = {}) {
  if (s.cams.size() < 3) {
    throw MarginalizationError("marginalization needs at least 3 camera states, have " +
                               std::to_string(s.cams.size()));
  }
  std::vector<const CamState*> remaining;
  remaining.reserve(s.cams.size());
  for (const auto& c : s.cams) remaining.push_back(&c);

  std::array<CamId, 2> picked{};
  for (int pass = 0; pass < 2; ++pass) {
    const std::size_t n = remaining.size();
    std::size_t victim = 0;
    if (n >= 3) {
      const CamState& second = *remaining[n - 2];
      const CamState& prev = *remaining[n - 3];
      const double angle = quat_error(second.q_CG, prev.q_CG).norm();
      const double dist = (second.p_GC - prev.p_GC).norm();
      if (angle < th.rotation && dist < th.translation) victim = n - 2;
    }
    picked[static_cast<std::size_t>(pass)] = remaining[victim]->id;
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(victim));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

/// Removes camera states and their covariance rows and columns.
inline void prune_cameras(FilterState& s, std::span<const CamId> ids) {
  std::vector<int> keep;
  keep.reserve(static_cast<std::size_t>(s.dim()));
  for (int i = 0; i < kImuErrorDim; ++i) keep.push_back(i);
  std::vector<CamState> cams;
  for (std::size_t i = 0; i < s.cams.size(); ++i) {
    if (std::find(ids.begin(), ids.end(), s.cams[i].id) != ids.end()) continue;
    cams.push_back(s.cams[i]);
    const int off = cam_offset(static_cast<int>(i));
    for (int k = 0; k < kCamErrorDim; ++k) keep.push_back(off + k);
  }
  if (cams.size() == s.cams.size()) return;
  const auto n = static_cast<Eigen::Index>(keep.size());
  MatX P(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      P(i, j) = s.P(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]);
    }
  }
  s.P = std::move(P);
  s.cams = std::move(cams);
}

// ---------------------------------------------------------------------------
// Update step

struct UpdateConfig {
  TriangulationConfig triangulation;
  MotionThresholds motion;
  double depth_floor = kDefaultDepthFloor;
  bool h_projection = true;
  bool gating = true;
  bool track_yaw_information = false;  // fill yaw_information_*, costs one inverse per update
};

enum class UpdateTrigger { kFeatureLost, kWindowFull };

struct UpdateDiagnostics {
  double timestamp = 0.0;
  UpdateTrigger trigger = UpdateTrigger::kFeatureLost;
  int candidates = 0;
  int used = 0;
  int rejected_too_few = 0;
  int rejected_triangulation = 0;
  int rejected_behind_camera = 0;
  int rejected_rank = 0;
  int rejected_uninformative = 0;
  int rejected_gate = 0;
  int residual_dof = 0;
  double gamma_mean = 0.0;
  double gamma_max = 0.0;
  double max_abs_residual = 0.0;
  double h_projection_residual = 0.0;  // max ‖H_xo N‖ / ‖H_xo‖ over features
  double yaw_variance_before = 0.0;
  double yaw_variance_after = 0.0;
  double heading_variance_before = 0.0;  // IMU heading about gravity
  double heading_variance_after = 0.0;
  double yaw_information_before = 0.0;  // nᵀ P⁻¹ n along the yaw direction
  double yaw_information_after = 0.0;
  bool applied = false;
  std::vector<CamId> pruned;
};

/// Linearizes each track, projects, gates and applies one stacked update.
/// Tracks are processed in the order given; callers pass them sorted by id.
inline UpdateDiagnostics update_with_tracks(FilterState& s, std::span<const FeatureTrack> tracks,
                                            const UpdateConfig& cfg) {
  UpdateDiagnostics d;
  d.candidates = static_cast<int>(tracks.size());
  const MatX N = unobservable_basis(s);
  const VecX n_yaw = N.col(3);
  d.yaw_variance_before = n_yaw.dot(s.P * n_yaw);
  d.yaw_variance_after = d.yaw_variance_before;
  d.heading_variance_before = imu_yaw_variance(s);
  d.heading_variance_after = d.heading_variance_before;
  auto information = [&n_yaw](const MatX& P) { return n_yaw.dot(P.ldlt().solve(n_yaw)); };
  if (cfg.track_yaw_information) {
    d.yaw_information_before = information(s.P);
    d.yaw_information_after = d.yaw_information_before;
  }

  TriangulationConfig tcfg = cfg.triangulation;
  tcfg.sigma_im = s.params.sigma_im;

  std::vector<MatX> blocks;
  std::vector<VecX> residuals;
  Eigen::Index total_rows = 0;
  double gamma_sum = 0.0;
  for (const FeatureTrack& track : tracks) {
    int live = 0;
    for (const auto& o : track.observations) {
      if (cam_position(s, o.cam_id) >= 0) ++live;
    }
    if (live < 2) {
      ++d.rejected_too_few;
      continue;
    }
    const TriangulationResult tri = triangulate(track, s.cams, s.extrinsics, tcfg);
    if (tri.status != TriangulationStatus::kOk) {
      ++d.rejected_triangulation;
      continue;
    }
    LinearizedFeature lf;
    try {
      lf = linearize_feature(s, track.observations, tri.p_G, cfg.depth_floor);
    } catch (const BehindCameraError&) {
      ++d.rejected_behind_camera;
      continue;
    }
    if (cfg.h_projection) lf.H_x = observability_project_H(lf.H_x, N);
    const ProjectionStatus ps = stack_and_project(lf);
    if (ps == ProjectionStatus::kRankDeficient) {
      ++d.rejected_rank;
      continue;
    }
    if (ps == ProjectionStatus::kUninformative) {
      ++d.rejected_uninformative;
      continue;
    }
    if (cfg.gating) {
      const GateResult g = chi_square_gate(lf.H_xo, lf.r_o, s.P, s.params.sigma_im);
      if (!g.accept) {
        ++d.rejected_gate;
        continue;
      }
      gamma_sum += g.gamma;
      d.gamma_max = std::max(d.gamma_max, g.gamma);
    }
    d.max_abs_residual = std::max(d.max_abs_residual, lf.r.cwiseAbs().maxCoeff());
    if (cfg.h_projection) {
      const double hn = lf.H_xo.norm();
      if (hn > 0.0) {
        d.h_projection_residual = std::max(d.h_projection_residual, (lf.H_xo * N).norm() / hn);
      }
    }
    total_rows += lf.H_xo.rows();
    blocks.push_back(std::move(lf.H_xo));
    residuals.push_back(std::move(lf.r_o));
    ++d.used;
  }
  d.residual_dof = static_cast<int>(total_rows);
  if (d.used > 0) d.gamma_mean = gamma_sum / d.used;
  if (total_rows == 0) return d;

  MatX H(total_rows, s.dim());
  VecX r(total_rows);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    H.middleRows(row, blocks[i].rows()) = blocks[i];
    r.segment(row, residuals[i].size()) = residuals[i];
    row += blocks[i].rows();
  }
  auto [Hc, rc] = qr_compress(H, r);
  d.applied = ekf_update_in_place(s, Hc, rc, s.params.sigma_im).applied;
  d.yaw_variance_after = n_yaw.dot(s.P * n_yaw);
  d.heading_variance_after = imu_yaw_variance(s);
  if (cfg.track_yaw_information) d.yaw_information_after = information(s.P);
  return d;
}

/// Keeps only the observations made at the given camera states.
inline std::vector<FeatureTrack> observations_at(std::span<const FeatureTrack> tracks,
                                                 std::span<const CamId> ids) {
  std::vector<FeatureTrack> out;
  for (const auto& t : tracks) {
    FeatureTrack sub{t.feature_id, {}};
    for (const auto& o : t.observations) {
      if (std::find(ids.begin(), ids.end(), o.cam_id) != ids.end()) sub.observations.push_back(o);
    }
    if (!sub.observations.empty()) out.push_back(std::move(sub));
  }
  return out;
}

/// One delayed update. On a window trigger the two selected states are
/// consumed: only their observations are used, then they are removed.
inline UpdateDiagnostics run_update_step(FilterState& s, std::span<const FeatureTrack> tracks,
                                         UpdateTrigger trigger, const UpdateConfig& cfg) {
  if (trigger == UpdateTrigger::kFeatureLost) {
    UpdateDiagnostics d = update_with_tracks(s, tracks, cfg);
    d.trigger = trigger;
    return d;
  }
  const std::array<CamId, 2> ids = select_marginalize(s, cfg.motion);
  const auto consumed = observations_at(tracks, ids);
  UpdateDiagnostics d = update_with_tracks(s, consumed, cfg);
  d.trigger = trigger;
  prune_cameras(s, ids);
  d.pruned.assign(ids.begin(), ids.end());
  return d;
}

}  // namespace smsckf
