#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Geometry>

#include "dlo/error.hpp"
#include "dlo/keyvalue.hpp"
#include "dlo/lie.hpp"

namespace dlo {

struct TrajectoryEntry {
  std::uint64_t frame_index = 0;
  Pose pose;
  std::optional<double> timestamp;
};

/// Absolute sensor poses, one per frame, in the frame of the first scan.
struct Trajectory {
  std::vector<TrajectoryEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  const Pose& pose(std::size_t i) const { return entries[i].pose; }
  void push_back(std::uint64_t frame, const Pose& pose, std::optional<double> stamp = std::nullopt) {
    entries.push_back({frame, pose, stamp});
  }
};

enum class TrajectoryFormat { kKitti, kTum };

inline TrajectoryFormat parse_trajectory_format(std::string_view name) {
  if (name == "kitti") return TrajectoryFormat::kKitti;
  if (name == "tum") return TrajectoryFormat::kTum;
  throw Error(ErrorCode::kParseError, "unknown trajectory format '" + std::string(name) + "'");
}

namespace detail {

// Adding 0.0 turns -0 into 0 so identity rows print without signs.
inline std::string pose_number(double x) { return format_double(x + 0.0); }

}  // namespace detail

/// KITTI: twelve values per line, the row-major 3x4 [R | t].
/// TUM: "timestamp x y z qx qy qz qw"; the timestamp falls back to the frame
/// index when the entry has none.
inline void write_trajectory(const Trajectory& traj, const std::filesystem::path& path, TrajectoryFormat format) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (const auto& e : traj.entries) {
    std::string line;
    auto append = [&](double x) {
      if (!line.empty()) line += ' ';
      line += detail::pose_number(x);
    };
    if (format == TrajectoryFormat::kKitti) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) append(e.pose.R(r, c));
        append(e.pose.t(r));
      }
    } else {
      append(e.timestamp.value_or(static_cast<double>(e.frame_index)));
      for (int i = 0; i < 3; ++i) append(e.pose.t(i));
      const Eigen::Quaterniond q(e.pose.R);
      for (double x : {q.x(), q.y(), q.z(), q.w()}) append(x);
    }
    out << line << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

/// Reads either format; frame indices are assigned by line order.
inline Trajectory read_trajectory(const std::filesystem::path& path, TrajectoryFormat format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  Trajectory traj;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (detail::trim(line).empty()) continue;
    const KeyValue kv{"pose", std::string(detail::trim(line)), path.string() + ":" + std::to_string(line_no)};
    const auto v = parse_numbers(kv);
    TrajectoryEntry e;
    e.frame_index = traj.size();
    if (format == TrajectoryFormat::kKitti) {
      if (v.size() != 12) throw Error(ErrorCode::kFormatError, kv.source + ": expected 12 values");
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) e.pose.R(r, c) = v[4 * r + c];
        e.pose.t(r) = v[4 * r + 3];
      }
    } else {
      if (v.size() != 8) throw Error(ErrorCode::kFormatError, kv.source + ": expected 8 values");
      e.timestamp = v[0];
      e.pose.t = Eigen::Vector3d(v[1], v[2], v[3]);
      e.pose.R = Eigen::Quaterniond(v[7], v[4], v[5], v[6]).normalized().toRotationMatrix();
    }
    traj.entries.push_back(e);
  }
  return traj;
}

}  // namespace dlo
