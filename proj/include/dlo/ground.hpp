#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "dlo/lie.hpp"
#include "dlo/pointcloud.hpp"
#include "dlo/synth.hpp"

namespace dlo {

struct GroundConfig {
  double band_max_z = -1.0;       // only points below this height are ground candidates
  double inlier_distance = 0.1;   // meters
  int iterations = 200;
  double min_inlier_fraction = 0.2;
  double max_tilt_deg = 20.0;     // candidate planes steeper than this are rejected
  std::size_t max_candidates = 20000;
  std::uint64_t seed = 0x6C6576656CULL;
};

struct PitchCompensation {
  Scan scan;
  Pose correction;     // applied rotation, correction.R * n_ground = +z
  double roll = 0.0;   // radians, rotation about x applied first
  double pitch = 0.0;  // radians, rotation about y applied second
  bool ground_found = false;
  double inlier_fraction = 0.0;
};

namespace detail {

struct Plane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // unit, n_z > 0
  double offset = 0.0;                                // n . p + offset = 0
};

inline Plane fit_plane(const std::vector<Point3>& pts, const std::vector<std::size_t>& idx) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (auto i : idx) mean += pts[i];
  mean /= static_cast<double>(idx.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (auto i : idx) {
    const Eigen::Vector3d d = pts[i] - mean;
    cov.noalias() += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Plane plane;
  plane.normal = eig.eigenvectors().col(0);
  if (plane.normal.z() < 0.0) plane.normal = -plane.normal;
  plane.offset = -plane.normal.dot(mean);
  return plane;
}

inline std::vector<std::size_t> plane_inliers(const std::vector<Point3>& pts, const Plane& plane, double dist) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (std::abs(plane.normal.dot(pts[i]) + plane.offset) < dist) out.push_back(i);
  return out;
}

}  // namespace detail

/// Levels the scan on its dominant ground plane: RANSAC over the points
/// below `band_max_z`, a least-squares refit on the inliers, then the
/// roll/pitch rotation taking the plane normal to +z. When fewer than
/// `min_inlier_fraction` of the candidates support a plane, or the scan is
/// empty, the scan passes through unchanged with ground_found = false.
inline PitchCompensation pitch_compensate(const Scan& scan, const GroundConfig& cfg = {}) {
  PitchCompensation out;
  out.scan = scan;

  std::vector<Point3> candidates;
  for (const auto& p : scan.points)
    if (p.z() < cfg.band_max_z) candidates.push_back(p);
  if (candidates.size() > cfg.max_candidates) {
    std::vector<Point3> thinned;
    const double stride = static_cast<double>(candidates.size()) / cfg.max_candidates;
    for (std::size_t k = 0; k < cfg.max_candidates; ++k)
      thinned.push_back(candidates[static_cast<std::size_t>(k * stride)]);
    candidates.swap(thinned);
  }
  if (candidates.size() < 3) return out;

  const double cos_max_tilt = std::cos(cfg.max_tilt_deg * M_PI / 180.0);
  auto rng = derive_rng(cfg.seed, scan.frame_index);
  std::vector<std::size_t> best;
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto& a = candidates[rng.next() % candidates.size()];
    const auto& b = candidates[rng.next() % candidates.size()];
    const auto& c = candidates[rng.next() % candidates.size()];
    Eigen::Vector3d n = (b - a).cross(c - a);
    if (n.norm() < 1e-9) continue;
    n.normalize();
    if (n.z() < 0.0) n = -n;
    if (n.z() < cos_max_tilt) continue;
    auto inliers = detail::plane_inliers(candidates, {n, -n.dot(a)}, cfg.inlier_distance);
    if (inliers.size() > best.size()) best.swap(inliers);
  }
  if (best.size() < 3) return out;

  detail::Plane plane = detail::fit_plane(candidates, best);
  for (int refine = 0; refine < 2; ++refine) {
    auto inliers = detail::plane_inliers(candidates, plane, cfg.inlier_distance);
    if (inliers.size() < 3) break;
    best.swap(inliers);
    plane = detail::fit_plane(candidates, best);
  }
  out.inlier_fraction = static_cast<double>(best.size()) / candidates.size();
  if (out.inlier_fraction < cfg.min_inlier_fraction || plane.normal.z() < cos_max_tilt) return out;

  const Eigen::Vector3d& n = plane.normal;
  out.roll = std::atan2(n.y(), n.z());
  out.pitch = std::atan2(-n.x(), std::hypot(n.y(), n.z()));
  out.correction.R = (Eigen::AngleAxisd(out.pitch, Eigen::Vector3d::UnitY()) *
                      Eigen::AngleAxisd(out.roll, Eigen::Vector3d::UnitX()))
                         .toRotationMatrix();
  out.ground_found = true;
  for (auto& p : out.scan.points) p = out.correction.R * p;
  return out;
}

}  // namespace dlo
