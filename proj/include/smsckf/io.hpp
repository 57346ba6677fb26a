#pragma once

// CSV streams:
//   IMU           timestamp_ns,wx,wy,wz,ax,ay,az
//   tracks        timestamp_ns,feature_id,u1,v1,u2,v2
//   ground truth  timestamp_ns,px,py,pz,qx,qy,qz,qw,vx,vy,vz
//   estimate      timestamp_ns,px,py,pz,qx,qy,qz,qw,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz
// A first line starting with a letter is treated as a header.

#include "smsckf/propagation.hpp"
#include "smsckf/simulator.hpp"
#include "smsckf/state.hpp"
#include "smsckf/update.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace smsckf {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace csv {

inline std::int64_t to_ns(double t) { return static_cast<std::int64_t>(std::llround(t * 1e9)); }
inline double from_ns(std::int64_t ns) { return static_cast<double>(ns) / 1e9; }

/// Shortest decimal form that reads back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view f = line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                            : comma - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    out.push_back(f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view f, const std::string& path, std::size_t line) {
  T v{};
  const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
  if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
    throw ParseError(path, line, "cannot parse number '" + std::string(f) + "'");
  }
  return v;
}

/// Calls row(fields, line_number) for every data line.
template <typename RowFn>
void for_each_row(const std::string& path, std::size_t arity, RowFn&& row) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (n == 1 && std::isalpha(static_cast<unsigned char>(line[0]))) continue;
    const auto fields = split(line);
    if (fields.size() != arity) {
      throw ParseError(path, n, "expected " + std::to_string(arity) + " fields, found " +
                                    std::to_string(fields.size()));
    }
    row(fields, n);
  }
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

}  // namespace csv

inline std::vector<ImuSample> ingest_imu_csv(const std::string& path) {
  std::vector<ImuSample> out;
  std::int64_t last_ns = 0;
  csv::for_each_row(path, 7, [&](const std::vector<std::string_view>& f, std::size_t line) {
    const auto ns = csv::parse_number<std::int64_t>(f[0], path, line);
    if (!out.empty() && ns <= last_ns) {
      throw ParseError(path, line, "timestamps must be strictly increasing");
    }
    last_ns = ns;
    ImuSample s;
    s.timestamp = csv::from_ns(ns);
    for (int i = 0; i < 3; ++i) {
      s.omega_m(i) = csv::parse_number<double>(f[1 + i], path, line);
      s.accel_m(i) = csv::parse_number<double>(f[4 + i], path, line);
    }
    out.push_back(s);
  });
  return out;
}

inline void write_imu_csv(const std::string& path, const std::vector<ImuSample>& samples) {
  auto out = csv::open_out(path);
  out << "timestamp_ns,wx,wy,wz,ax,ay,az\n";
  for (const auto& s : samples) {
    out << csv::to_ns(s.timestamp);
    for (int i = 0; i < 3; ++i) out << ',' << csv::fmt(s.omega_m(i));
    for (int i = 0; i < 3; ++i) out << ',' << csv::fmt(s.accel_m(i));
    out << '\n';
  }
}

/// Rows sharing a timestamp form one frame; frame timestamps must increase.
inline std::vector<Frame> ingest_tracks_csv(const std::string& path) {
  std::vector<Frame> frames;
  std::int64_t last_ns = 0;
  csv::for_each_row(path, 6, [&](const std::vector<std::string_view>& f, std::size_t line) {
    const auto ns = csv::parse_number<std::int64_t>(f[0], path, line);
    if (frames.empty() || ns > last_ns) {
      frames.push_back(Frame{csv::from_ns(ns), {}});
    } else if (ns < last_ns) {
      throw ParseError(path, line, "timestamps must be non-decreasing");
    }
    last_ns = ns;
    const auto id = csv::parse_number<std::int64_t>(f[1], path, line);
    Vec4d z;
    for (int i = 0; i < 4; ++i) z(i) = csv::parse_number<double>(f[2 + i], path, line);
    frames.back().observations.emplace_back(id, z);
  });
  return frames;
}

inline void write_tracks_csv(const std::string& path, const std::vector<Frame>& frames) {
  auto out = csv::open_out(path);
  out << "timestamp_ns,feature_id,u1,v1,u2,v2\n";
  for (const auto& fr : frames) {
    const auto ns = csv::to_ns(fr.t);
    for (const auto& [id, z] : fr.observations) {
      out << ns << ',' << id;
      for (int i = 0; i < 4; ++i) out << ',' << csv::fmt(z(i));
      out << '\n';
    }
  }
}

struct PoseRecord {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Quaternion q;
  Vec3 v = Vec3::Zero();
};

inline std::vector<PoseRecord> ingest_groundtruth_csv(const std::string& path) {
  std::vector<PoseRecord> out;
  std::int64_t last_ns = 0;
  csv::for_each_row(path, 11, [&](const std::vector<std::string_view>& f, std::size_t line) {
    const auto ns = csv::parse_number<std::int64_t>(f[0], path, line);
    if (!out.empty() && ns <= last_ns) {
      throw ParseError(path, line, "timestamps must be strictly increasing");
    }
    last_ns = ns;
    double v[10];
    for (int i = 0; i < 10; ++i) v[i] = csv::parse_number<double>(f[1 + i], path, line);
    out.push_back({csv::from_ns(ns), Vec3(v[0], v[1], v[2]), Quaternion(v[3], v[4], v[5], v[6]),
                   Vec3(v[7], v[8], v[9])});
  });
  return out;
}

inline void write_groundtruth_csv(const std::string& path, const std::vector<TruthState>& truth) {
  auto out = csv::open_out(path);
  out << "timestamp_ns,px,py,pz,qx,qy,qz,qw,vx,vy,vz\n";
  for (const auto& s : truth) {
    out << csv::to_ns(s.t);
    for (int i = 0; i < 3; ++i) out << ',' << csv::fmt(s.p(i));
    for (int i = 0; i < 4; ++i) out << ',' << csv::fmt(s.q_IG.coeffs()(i));
    for (int i = 0; i < 3; ++i) out << ',' << csv::fmt(s.v(i));
    out << '\n';
  }
}

inline void write_landmarks_csv(const std::string& path, const std::vector<Vec3>& landmarks) {
  auto out = csv::open_out(path);
  out << "landmark,x,y,z\n";
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    out << i << ',' << csv::fmt(landmarks[i].x()) << ',' << csv::fmt(landmarks[i].y()) << ','
        << csv::fmt(landmarks[i].z()) << '\n';
  }
}

/// One state snapshot row: timestamp, p, q, v, b_g, b_a.
inline std::string state_csv_row(const ImuState& s) {
  std::ostringstream out;
  out << csv::to_ns(s.timestamp);
  for (int i = 0; i < 3; ++i) out << ',' << csv::fmt(s.p(i));
  for (int i = 0; i < 4; ++i) out << ',' << csv::fmt(s.q_IG.coeffs()(i));
  for (int i = 0; i < 3; ++i) out << ',' << csv::fmt(s.v(i));
  for (int i = 0; i < 3; ++i) out << ',' << csv::fmt(s.b_g(i));
  for (int i = 0; i < 3; ++i) out << ',' << csv::fmt(s.b_a(i));
  return out.str();
}

inline constexpr const char* kStateCsvHeader =
    "timestamp_ns,px,py,pz,qx,qy,qz,qw,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz";

inline constexpr const char* kDiagnosticsCsvHeader =
    "timestamp_ns,trigger,candidates,used,rejected_too_few,rejected_triangulation,"
    "rejected_behind_camera,rejected_rank,rejected_uninformative,rejected_gate,residual_dof,"
    "gamma_mean,gamma_max,max_abs_residual,h_projection_residual,yaw_variance_before,"
    "yaw_variance_after,pruned";

inline std::string diagnostics_csv_row(const UpdateDiagnostics& d) {
  std::ostringstream out;
  out << csv::to_ns(d.timestamp) << ','
      << (d.trigger == UpdateTrigger::kFeatureLost ? "feature_lost" : "window_full") << ','
      << d.candidates << ',' << d.used << ',' << d.rejected_too_few << ','
      << d.rejected_triangulation << ',' << d.rejected_behind_camera << ',' << d.rejected_rank
      << ',' << d.rejected_uninformative << ',' << d.rejected_gate << ',' << d.residual_dof << ','
      << csv::fmt(d.gamma_mean) << ',' << csv::fmt(d.gamma_max) << ','
      << csv::fmt(d.max_abs_residual) << ',' << csv::fmt(d.h_projection_residual) << ','
      << csv::fmt(d.yaw_variance_before) << ',' << csv::fmt(d.yaw_variance_after) << ',';
  for (std::size_t i = 0; i < d.pruned.size(); ++i) {
    if (i) out << ' ';
    out << d.pruned[i];
  }
  return out.str();
}

}  // namespace smsckf
