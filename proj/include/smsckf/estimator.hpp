#pragma once

// Sliding-window stereo estimator: buffers IMU samples, augments a camera
// state per image, runs feature-lost updates and, once the window is full,
// consumes and removes two camera states (every other image).

#include "smsckf/augmentation.hpp"
#include "smsckf/measurement.hpp"
#include "smsckf/propagation.hpp"
#include "smsckf/state.hpp"
#include "smsckf/update.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace smsckf {

struct EstimatorConfig {
  NoiseParams noise;
  StereoExtrinsics extrinsics;
  InitialCovariance prior;
  std::size_t max_window = 20;
  PropagationOptions propagation;
  UpdateConfig update;
};

struct FeatureMeasurement {
  FeatureId id = 0;
  Vec4d z = Vec4d::Zero();
};

struct FrameResult {
  double timestamp = 0.0;
  CamId cam_id = 0;
  std::size_t window_after_augment = 0;
  std::size_t window_after_prune = 0;
  std::vector<CamId> pruned;
  std::optional<UpdateDiagnostics> lost_update;
  std::optional<UpdateDiagnostics> window_update;
};

class Estimator {
 public:
  Estimator(const EstimatorConfig& cfg, const ImuState& initial)
      : cfg_(cfg), state_(make_filter_state(initial, cfg.extrinsics, cfg.noise, cfg.prior)) {
    if (cfg_.max_window < 3) throw StateError("max_window must be at least 3");
  }

  Estimator(const EstimatorConfig& cfg, const ImuState& initial, const MatX& P0)
      : Estimator(cfg, initial) {
    if (P0.rows() != kImuErrorDim || P0.cols() != kImuErrorDim) {
      throw StateError("initial covariance must be 21x21");
    }
    state_.P = enforce_symmetry(P0);
  }

  void feed_imu(const ImuSample& s) {
    if (!last_sample_) {
      if (s.timestamp <= state_.imu.timestamp) {
        last_sample_ = ImuSample{state_.imu.timestamp, s.omega_m, s.accel_m};
        return;
      }
      last_sample_ = ImuSample{state_.imu.timestamp, s.omega_m, s.accel_m};
    }
    const double newest = buffer_.empty() ? last_sample_->timestamp : buffer_.back().timestamp;
    if (!(s.timestamp > newest)) {
      throw PropagationError("IMU timestamps must be strictly increasing");
    }
    buffer_.push_back(s);
  }

  FrameResult process_frame(double t, std::span<const FeatureMeasurement> measurements) {
    propagate_to(t);
    FrameResult fr;
    fr.timestamp = t;
    augment_in_place(state_, t, cfg_.max_window);
    fr.cam_id = state_.cams.back().id;
    fr.window_after_augment = state_.cams.size();

    std::map<FeatureId, bool> seen;
    for (const auto& m : measurements) {
      tracks_[m.id].feature_id = m.id;
      tracks_[m.id].observations.push_back({fr.cam_id, m.z});
      seen[m.id] = true;
    }

    // Tracks not observed in this frame are finished.
    std::vector<FeatureTrack> lost;
    for (auto it = tracks_.begin(); it != tracks_.end();) {
      if (!seen.contains(it->first)) {
        lost.push_back(std::move(it->second));
        it = tracks_.erase(it);
      } else {
        ++it;
      }
    }
    if (!lost.empty()) {
      auto d = run_update_step(state_, lost, UpdateTrigger::kFeatureLost, cfg_.update);
      d.timestamp = t;
      fr.lost_update = d;
      diagnostics_.push_back(std::move(d));
    }

    if (state_.cams.size() >= cfg_.max_window) {
      std::vector<FeatureTrack> live;
      live.reserve(tracks_.size());
      for (const auto& [id, tr] : tracks_) live.push_back(tr);
      auto d = run_update_step(state_, live, UpdateTrigger::kWindowFull, cfg_.update);
      d.timestamp = t;
      fr.pruned = d.pruned;
      drop_observations(d.pruned);
      fr.window_update = d;
      diagnostics_.push_back(std::move(d));
    }
    fr.window_after_prune = state_.cams.size();
    return fr;
  }

  /// Propagates through every buffered sample up to t, splitting the sample
  /// that straddles t by linear interpolation.
  void propagate_to(double t) {
    if (!last_sample_) return;
    while (!buffer_.empty() && buffer_.front().timestamp <= t) {
      step(*last_sample_, buffer_.front());
      last_sample_ = buffer_.front();
      buffer_.pop_front();
    }
    if (state_.imu.timestamp < t && !buffer_.empty()) {
      const ImuSample mid = interpolate(*last_sample_, buffer_.front(), t);
      step(*last_sample_, mid);
      last_sample_ = mid;
    }
  }

  const FilterState& state() const { return state_; }
  FilterState& mutable_state() { return state_; }
  const EstimatorConfig& config() const { return cfg_; }
  const std::vector<UpdateDiagnostics>& diagnostics() const { return diagnostics_; }
  const std::map<FeatureId, FeatureTrack>& tracks() const { return tracks_; }
  double max_observability_residual() const { return max_oc_residual_; }
  std::size_t propagation_steps() const { return propagation_steps_; }

 private:
  void step(const ImuSample& a, const ImuSample& b) {
    if (!(b.timestamp > a.timestamp)) return;
    const PropagationInfo info = propagate_in_place(state_, a, b, cfg_.propagation);
    if (info.observability_residual > max_oc_residual_) max_oc_residual_ = info.observability_residual;
    ++propagation_steps_;
  }

  void drop_observations(const std::vector<CamId>& ids) {
    for (auto it = tracks_.begin(); it != tracks_.end();) {
      auto& obs = it->second.observations;
      std::erase_if(obs, [&](const StereoObservation& o) {
        return std::find(ids.begin(), ids.end(), o.cam_id) != ids.end();
      });
      if (obs.empty()) {
        it = tracks_.erase(it);
      } else {
        ++it;
      }
    }
  }

  EstimatorConfig cfg_;
  FilterState state_;
  std::deque<ImuSample> buffer_;
  std::optional<ImuSample> last_sample_;
  std::map<FeatureId, FeatureTrack> tracks_;
  std::vector<UpdateDiagnostics> diagnostics_;
  double max_oc_residual_ = 0.0;
  std::size_t propagation_steps_ = 0;
};

}  // namespace smsckf
