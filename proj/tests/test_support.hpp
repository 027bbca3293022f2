#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <set>
#include <vector>
#include <string>

#include <unistd.h>

#include "dlo/dlo.hpp"

namespace dlo::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto rng = SplitMix64(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(::getpid()));
    path_ = std::filesystem::temp_directory_path() / ("dlo_" + tag + "_" + std::to_string(rng.next() % 1000000));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

/// Grid whose means are a random smooth field (sum of Gaussian bumps and a
/// tilt) with every cell valid except an optional random fraction of holes.
inline HeightGrid random_smooth_grid(SplitMix64& rng, const GridConfig& cfg, double hole_fraction = 0.0) {
  HeightGrid g(cfg);
  struct Bump {
    double u, v, sigma, amplitude;
  };
  Bump bumps[8];
  for (auto& b : bumps)
    b = {rng.uniform(0, cfg.cols), rng.uniform(0, cfg.rows), rng.uniform(2.0, 8.0), rng.uniform(-1.5, 1.5)};
  const double tilt_u = rng.uniform(-0.02, 0.02), tilt_v = rng.uniform(-0.02, 0.02);
  for (int v = 0; v < cfg.rows; ++v)
    for (int u = 0; u < cfg.cols; ++u) {
      double h = tilt_u * u + tilt_v * v;
      for (const auto& b : bumps) {
        const double d2 = (u - b.u) * (u - b.u) + (v - b.v) * (v - b.v);
        h += b.amplitude * std::exp(-0.5 * d2 / (b.sigma * b.sigma));
      }
      const auto i = g.index(u, v);
      g.mutable_means()[i] = h;
      g.mutable_counts()[i] = rng.uniform() < hole_fraction ? 0u : 3u + static_cast<std::uint32_t>(rng.next() % 5);
    }
  return g;
}

/// Grid of independent uniform means, every cell valid except holes.
inline HeightGrid random_rough_grid(SplitMix64& rng, const GridConfig& cfg, double amplitude, double hole_fraction) {
  HeightGrid g(cfg);
  for (std::size_t i = 0; i < g.means().size(); ++i) {
    g.mutable_means()[i] = rng.uniform(-amplitude, amplitude);
    g.mutable_counts()[i] = rng.uniform() < hole_fraction ? static_cast<std::uint32_t>(rng.next() % 3) : 3u;
  }
  return g;
}

/// Scattered boxes and cylinders on rolling ground, the scene family used
/// for pair registration tests.
inline SceneSpec registration_scene(std::uint64_t seed, double roughness = 0.2) {
  SceneRecipe r;
  r.seed = seed;
  r.spread = 25.0;
  r.roughness = roughness;
  r.boxes = 30;
  r.cylinders = 15;
  return random_scene(r);
}

/// Dense top-down sample of `scene` from `sensor`, 4 points per 0.1 m cell
/// over a 40 m window, 2 cm height noise.
inline Scan dense_scan(const SceneSpec& scene, const PlanarPose& sensor, std::uint64_t stream) {
  return sample_surface_scan(scene, sensor, 1.7, 20.0, 0.1, 2, 0.02, stream);
}

inline double yaw_error_deg(const Pose& estimate, const Pose& truth) {
  return std::abs(wrap_angle(planar_project(estimate).yaw - planar_project(truth).yaw)) * 180.0 / M_PI;
}

inline double planar_translation_error(const Pose& estimate, const Pose& truth) {
  return (estimate.t - truth.t).head<2>().norm();
}

// Independent full-grid pass written against the raw arrays.
inline std::set<std::pair<int, int>> brute_force_selection(const HeightGrid& g, double threshold) {
  std::set<std::pair<int, int>> out;
  const auto& m = g.means();
  const auto& n = g.counts();
  const int cols = g.cols(), rows = g.rows();
  auto ok = [&](int u, int v) { return u < cols && v < rows && n[static_cast<std::size_t>(v) * cols + u] >= 3; };
  for (int v = 0; v < rows; ++v)
    for (int u = 0; u < cols; ++u) {
      if (!ok(u, v) || !ok(u + 1, v) || !ok(u, v + 1)) continue;
      const double c = m[static_cast<std::size_t>(v) * cols + u];
      const double gx = m[static_cast<std::size_t>(v) * cols + u + 1] - c;
      const double gy = m[static_cast<std::size_t>(v + 1) * cols + u] - c;
      if (std::sqrt(gx * gx + gy * gy) > threshold) out.insert({u, v});
    }
  return out;
}

inline std::set<std::pair<int, int>> as_set(const SelectedCells& cells) {
  std::set<std::pair<int, int>> out;
  for (const auto& c : cells) out.insert({c.cell.u, c.cell.v});
  return out;
}

struct JacobianCheck {
  std::size_t rows_checked = 0;
  std::size_t rows_failed = 0;
  std::size_t rows_skipped = 0;  // stencil straddles a cell boundary of grid 2
  double worst_ratio = 0.0;      // max |J - J_fd| / max(1e-5, 1e-3 |J|)
};

/// Residual of reference point p at q = exp(delta) * pose * p, computed
/// from the definition rather than through the solver.
inline std::optional<double> direct_residual(const HeightGrid& grid2, const Point3& p, const Pose& pose,
                                             const Vector6d& delta, DofMode mode) {
  const Point3 q = exp_map(Twist(delta)) * (pose * p);
  const Eigen::Vector2d g = to_grid_coords(grid2.config(), q.x(), q.y());
  const auto s = try_bilinear(grid2, g.x(), g.y());
  if (!s) return std::nullopt;
  return (mode == DofMode::kPlanar3 ? p.z() : q.z()) - s->value;
}

/// Central-difference check of residual_jacobian on one grid pair.
inline JacobianCheck check_jacobian(const HeightGrid& grid2, const std::vector<Point3>& points, const Pose& pose,
                                    DofMode mode, double step = 1e-6) {
  JacobianCheck out;
  for (const auto& p : points) {
    const Point3 q = pose * p;
    const Eigen::Vector2d g0 = to_grid_coords(grid2.config(), q.x(), q.y());
    if (!try_bilinear(grid2, g0.x(), g0.y())) continue;
    const JacobianRow J = residual_jacobian(grid2, q, mode);
    JacobianRow fd;
    bool smooth = true;
    for (int k = 0; k < 6 && smooth; ++k) {
      Vector6d d = Vector6d::Zero();
      d(k) = step;
      for (const Vector6d& dk : {Vector6d(d), Vector6d(-d)}) {
        const Point3 qk = exp_map(Twist(dk)) * q;
        const Eigen::Vector2d gk = to_grid_coords(grid2.config(), qk.x(), qk.y());
        if (std::floor(gk.x()) != std::floor(g0.x()) || std::floor(gk.y()) != std::floor(g0.y())) smooth = false;
      }
      if (!smooth) break;
      const auto plus = direct_residual(grid2, p, pose, d, mode);
      const auto minus = direct_residual(grid2, p, pose, -d, mode);
      if (!plus || !minus) {
        smooth = false;
        break;
      }
      fd(k) = (*plus - *minus) / (2.0 * step);
    }
    if (!smooth) {
      ++out.rows_skipped;
      continue;
    }
    ++out.rows_checked;
    bool ok = true;
    for (int k = 0; k < 6; ++k) {
      const double tol = std::max(1e-5, 1e-3 * std::abs(J(k)));
      const double ratio = std::abs(J(k) - fd(k)) / tol;
      out.worst_ratio = std::max(out.worst_ratio, ratio);
      if (ratio > 1.0) ok = false;
    }
    if (!ok) ++out.rows_failed;
  }
  return out;
}

/// Random grid pair and reference points for the Jacobian check: a smooth
/// random grid 2, points scattered over its window, and a random pose that
/// is planar or a full 6-DoF perturbation.
struct JacobianCase {
  HeightGrid grid2;
  std::vector<Point3> points;
  Pose pose;
  DofMode mode = DofMode::kPlanar3;
};

inline JacobianCase random_jacobian_case(SplitMix64& rng, int points = 300) {
  JacobianCase c;
  const double res = rng.uniform(0.05, 0.4);
  c.grid2 = random_smooth_grid(rng, GridConfig::square(60, res), rng.uniform(0.0, 0.1));
  const double half = 30.0 * res;
  c.mode = rng.uniform() < 0.5 ? DofMode::kPlanar3 : DofMode::kFull6;
  Vector6d xi;
  xi << rng.uniform(-0.1, 0.1) * half, rng.uniform(-0.1, 0.1) * half, rng.uniform(-0.3, 0.3), 0.0, 0.0,
      rng.uniform(-0.3, 0.3);
  if (c.mode == DofMode::kFull6) {
    xi(3) = rng.uniform(-0.05, 0.05);
    xi(4) = rng.uniform(-0.05, 0.05);
  } else {
    xi(2) = 0.0;
  }
  c.pose = exp_map(Twist(xi));
  for (int i = 0; i < points; ++i)
    c.points.emplace_back(rng.uniform(-0.8, 0.8) * half, rng.uniform(-0.8, 0.8) * half, rng.uniform(-2.0, 1.0));
  return c;
}

}  // namespace dlo::testing
