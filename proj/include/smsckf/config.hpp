#pragma once

// Flat key=value experiment configuration with [section] headers.
//
//   # comment
//   [trajectory]
//   kind = circle
//   amplitude = 5
//
// Every key has a default; unknown sections or keys are errors.

#include "smsckf/estimator.hpp"
#include "smsckf/evaluation.hpp"
#include "smsckf/simulator.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace smsckf {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How the filter is started relative to the reference trajectory.
struct InitializationOptions {
  // 0 starts exactly at truth; 1 draws the initial error from the prior.
  double error_scale = 0.0;
};

struct IngestPaths {
  std::string imu;
  std::string tracks;
  std::string groundtruth;
  double static_duration = 1.0;  // s of data averaged when no ground truth is given

  bool active() const { return !imu.empty() || !tracks.empty(); }
};

struct RunConfig {
  ScenarioConfig scenario;
  std::size_t max_window = 20;
  PropagationOptions propagation;
  UpdateConfig update;
  InitialCovariance prior;
  InitializationOptions init;
  AlignmentOptions alignment;
  bool align = true;
  IngestPaths ingest;

  EstimatorConfig estimator_config() const {
    EstimatorConfig ec;
    ec.noise = scenario.noise;
    ec.extrinsics = scenario.extrinsics;
    ec.prior = prior;
    ec.max_window = max_window;
    ec.propagation = propagation;
    ec.update = update;
    return ec;
  }

  void validate() const {
    scenario.noise.validate();
    scenario.frame_stride();
    if (!(scenario.extrinsics.baseline() > 0.0)) throw ConfigError("camera.baseline must be positive");
    if (max_window < 3) throw ConfigError("filter.max_window must be at least 3");
    if (scenario.trajectory.kind != TrajectoryKind::kHover &&
        !(scenario.trajectory.peak_speed > 0.0)) {
      throw ConfigError("trajectory.peak_speed must be positive");
    }
    if (!(scenario.trajectory.amplitude > 0.0)) throw ConfigError("trajectory.amplitude must be positive");
    if (!(scenario.trajectory.total_duration() > 0.0)) throw ConfigError("trajectory duration must be positive");
    if (scenario.noise_scale < 0.0) throw ConfigError("imu.noise_scale must be non-negative");
    if (!(scenario.camera.max_depth > scenario.camera.min_depth)) {
      throw ConfigError("camera.max_depth must exceed camera.min_depth");
    }
    if (init.error_scale < 0.0) throw ConfigError("filter.init_error_scale must be non-negative");
  }
};

namespace config_detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double to_double(std::string_view v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

inline std::int64_t to_int(std::string_view v) {
  std::int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("expected an integer, got '" + std::string(v) + "'");
  }
  return out;
}

inline bool to_bool(std::string_view v) {
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw ConfigError("expected a boolean, got '" + std::string(v) + "'");
}

// Three numbers separated by whitespace or commas.
inline Vec3 to_vec3(std::string_view v) {
  std::string text(v);
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream in{text};
  std::string a, b, c, extra;
  if (!(in >> a >> b >> c) || (in >> extra)) {
    throw ConfigError("expected three numbers, got '" + std::string(v) + "'");
  }
  return {to_double(a), to_double(b), to_double(c)};
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

inline const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      // trajectory
      {"trajectory.kind", [](RunConfig& c, std::string_view v) {
         try {
           c.scenario.trajectory.kind = parse_trajectory_kind(std::string(v));
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       }},
      {"trajectory.amplitude", [](RunConfig& c, std::string_view v) { c.scenario.trajectory.amplitude = to_double(v); }},
      {"trajectory.peak_speed", [](RunConfig& c, std::string_view v) { c.scenario.trajectory.peak_speed = to_double(v); }},
      {"trajectory.duration", [](RunConfig& c, std::string_view v) { c.scenario.trajectory.duration = to_double(v); }},
      {"trajectory.height", [](RunConfig& c, std::string_view v) { c.scenario.trajectory.height = to_double(v); }},
      {"trajectory.yaw_follows_velocity", [](RunConfig& c, std::string_view v) { c.scenario.trajectory.yaw_follows_velocity = to_bool(v); }},
      {"trajectory.static_prefix", [](RunConfig& c, std::string_view v) { c.scenario.trajectory.static_prefix = to_double(v); }},
      // imu
      {"imu.rate", [](RunConfig& c, std::string_view v) { c.scenario.imu_rate = to_double(v); }},
      {"imu.sigma_g", [](RunConfig& c, std::string_view v) { c.scenario.noise.sigma_g = to_double(v); }},
      {"imu.sigma_wg", [](RunConfig& c, std::string_view v) { c.scenario.noise.sigma_wg = to_double(v); }},
      {"imu.sigma_a", [](RunConfig& c, std::string_view v) { c.scenario.noise.sigma_a = to_double(v); }},
      {"imu.sigma_wa", [](RunConfig& c, std::string_view v) { c.scenario.noise.sigma_wa = to_double(v); }},
      {"imu.gravity", [](RunConfig& c, std::string_view v) { c.scenario.noise.gravity = to_vec3(v); }},
      {"imu.noise_scale", [](RunConfig& c, std::string_view v) { c.scenario.noise_scale = to_double(v); }},
      {"imu.initial_gyro_bias", [](RunConfig& c, std::string_view v) { c.scenario.initial_gyro_bias = to_double(v); }},
      {"imu.initial_accel_bias", [](RunConfig& c, std::string_view v) { c.scenario.initial_accel_bias = to_double(v); }},
      // camera
      {"camera.rate", [](RunConfig& c, std::string_view v) { c.scenario.camera.rate = to_double(v); }},
      {"camera.field_of_view", [](RunConfig& c, std::string_view v) { c.scenario.camera.field_of_view = to_double(v); }},
      {"camera.min_depth", [](RunConfig& c, std::string_view v) { c.scenario.camera.min_depth = to_double(v); }},
      {"camera.max_depth", [](RunConfig& c, std::string_view v) { c.scenario.camera.max_depth = to_double(v); }},
      {"camera.max_track_length", [](RunConfig& c, std::string_view v) { c.scenario.camera.max_track_length = static_cast<int>(to_int(v)); }},
      {"camera.min_track_length", [](RunConfig& c, std::string_view v) { c.scenario.camera.min_track_length = static_cast<int>(to_int(v)); }},
      {"camera.speed_dependent_lifetime", [](RunConfig& c, std::string_view v) { c.scenario.camera.speed_dependent_lifetime = to_bool(v); }},
      {"camera.lifetime_speed_scale", [](RunConfig& c, std::string_view v) { c.scenario.camera.lifetime_speed_scale = to_double(v); }},
      {"camera.max_features", [](RunConfig& c, std::string_view v) { c.scenario.camera.max_features = static_cast<int>(to_int(v)); }},
      {"camera.sigma_im", [](RunConfig& c, std::string_view v) { c.scenario.noise.sigma_im = to_double(v); }},
      {"camera.baseline", [](RunConfig& c, std::string_view v) { c.scenario.extrinsics.p_C1C2 = Vec3(to_double(v), 0.0, 0.0); }},
      {"camera.p_IC", [](RunConfig& c, std::string_view v) { c.scenario.p_IC = to_vec3(v); }},
      // landmarks
      {"landmarks.count", [](RunConfig& c, std::string_view v) { c.scenario.landmarks.count = static_cast<int>(to_int(v)); }},
      {"landmarks.margin", [](RunConfig& c, std::string_view v) { c.scenario.landmarks.margin = to_double(v); }},
      {"landmarks.clearance", [](RunConfig& c, std::string_view v) { c.scenario.landmarks.clearance = to_double(v); }},
      {"landmarks.z_min", [](RunConfig& c, std::string_view v) { c.scenario.landmarks.z_min = to_double(v); }},
      {"landmarks.z_max", [](RunConfig& c, std::string_view v) { c.scenario.landmarks.z_max = to_double(v); }},
      // filter
      {"filter.max_window", [](RunConfig& c, std::string_view v) {
         const auto n = to_int(v);
         if (n < 3) throw ConfigError("max_window must be at least 3");
         c.max_window = static_cast<std::size_t>(n);
       }},
      {"filter.observability_constraint", [](RunConfig& c, std::string_view v) { c.propagation.observability_constraint = to_bool(v); }},
      {"filter.h_projection", [](RunConfig& c, std::string_view v) { c.update.h_projection = to_bool(v); }},
      {"filter.gating", [](RunConfig& c, std::string_view v) { c.update.gating = to_bool(v); }},
      {"filter.rotation_threshold", [](RunConfig& c, std::string_view v) { c.update.motion.rotation = to_double(v); }},
      {"filter.translation_threshold", [](RunConfig& c, std::string_view v) { c.update.motion.translation = to_double(v); }},
      {"filter.prior_orientation", [](RunConfig& c, std::string_view v) { c.prior.orientation = to_double(v); }},
      {"filter.prior_gyro_bias", [](RunConfig& c, std::string_view v) { c.prior.gyro_bias = to_double(v); }},
      {"filter.prior_velocity", [](RunConfig& c, std::string_view v) { c.prior.velocity = to_double(v); }},
      {"filter.prior_accel_bias", [](RunConfig& c, std::string_view v) { c.prior.accel_bias = to_double(v); }},
      {"filter.prior_position", [](RunConfig& c, std::string_view v) { c.prior.position = to_double(v); }},
      {"filter.prior_extrinsic_rotation", [](RunConfig& c, std::string_view v) { c.prior.extrinsic_rotation = to_double(v); }},
      {"filter.prior_extrinsic_translation", [](RunConfig& c, std::string_view v) { c.prior.extrinsic_translation = to_double(v); }},
      {"filter.init_error_scale", [](RunConfig& c, std::string_view v) { c.init.error_scale = to_double(v); }},
      {"filter.triangulation_max_iterations", [](RunConfig& c, std::string_view v) { c.update.triangulation.max_iterations = static_cast<int>(to_int(v)); }},
      {"filter.triangulation_min_depth", [](RunConfig& c, std::string_view v) { c.update.triangulation.min_depth = to_double(v); }},
      {"filter.triangulation_max_rms_sigmas", [](RunConfig& c, std::string_view v) { c.update.triangulation.max_rms_sigmas = to_double(v); }},
      // sim
      {"sim.seed", [](RunConfig& c, std::string_view v) { c.scenario.seed = static_cast<std::uint64_t>(to_int(v)); }},
      // run
      {"run.align", [](RunConfig& c, std::string_view v) { c.align = to_bool(v); }},
      {"run.align_time", [](RunConfig& c, std::string_view v) { c.alignment.estimate_time_offset = to_bool(v); }},
      {"run.time_search_window", [](RunConfig& c, std::string_view v) { c.alignment.search_window = to_double(v); }},
      {"run.time_search_step", [](RunConfig& c, std::string_view v) { c.alignment.search_step = to_double(v); }},
      {"run.ingest_imu", [](RunConfig& c, std::string_view v) { c.ingest.imu = std::string(v); }},
      {"run.ingest_tracks", [](RunConfig& c, std::string_view v) { c.ingest.tracks = std::string(v); }},
      {"run.ingest_groundtruth", [](RunConfig& c, std::string_view v) { c.ingest.groundtruth = std::string(v); }},
      {"run.static_duration", [](RunConfig& c, std::string_view v) { c.ingest.static_duration = to_double(v); }},
  };
  return table;
}

}  // namespace config_detail

/// Names of all accepted keys, as section.key.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : config_detail::setters()) out.push_back(k);
  return out;
}

/// Applies one section.key = value assignment.
inline void set_config_value(RunConfig& cfg, const std::string& key, std::string_view value) {
  const auto& table = config_detail::setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown key '" + key + "'");
  it->second(cfg, config_detail::trim(value));
}

/// Parses configuration text on top of `base`; `origin` names the source in errors.
inline RunConfig parse_config(std::istream& in, const std::string& origin, RunConfig base = {}) {
  std::string line;
  std::string section;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    std::string_view s = config_detail::trim(line);
    if (const auto hash = s.find('#'); hash != std::string_view::npos) {
      s = config_detail::trim(s.substr(0, hash));
    }
    if (s.empty()) continue;
    const std::string where = origin + ":" + std::to_string(n) + ": ";
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where + "malformed section header");
      section = std::string(config_detail::trim(s.substr(1, s.size() - 2)));
      static const char* known[] = {"trajectory", "imu", "camera", "landmarks", "filter", "sim", "run"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known)) {
        throw ConfigError(where + "unknown section '" + section + "'");
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string key(config_detail::trim(s.substr(0, eq)));
    const std::string_view value = config_detail::trim(s.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + "key '" + key + "' outside any section");
    if (value.empty()) throw ConfigError(where + "empty value for '" + key + "'");
    try {
      set_config_value(base, section + "." + key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  RunConfig cfg = parse_config(in, path, std::move(base));
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return cfg;
}

}  // namespace smsckf
