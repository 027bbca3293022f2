#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "dlo/error.hpp"
#include "dlo/keyvalue.hpp"
#include "dlo/lie.hpp"
#include "dlo/pointcloud.hpp"
#include "dlo/trajectory.hpp"

namespace dlo {

/// SplitMix64. Fixed algorithm so seeded fixtures reproduce on every platform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal by Box-Muller (one draw per call, the pair's sine half is discarded).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t state_;
};

/// Stateless stream derivation: a distinct generator per (seed, a, b).
inline SplitMix64 derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  SplitMix64 mix(seed ^ (a * 0xD1B54A32D192ED03ULL) ^ (b * 0xABC98388FB8FAC03ULL));
  return SplitMix64(mix.next());
}

/// Upright box resting on z = 0, rotated by `yaw` about its center.
struct Box {
  double cx = 0.0, cy = 0.0, yaw = 0.0;
  double size_x = 1.0, size_y = 1.0, height = 1.0;
};

/// Upright cylinder resting on z = 0.
struct Cylinder {
  double cx = 0.0, cy = 0.0;
  double radius = 0.5, height = 1.0;
};

struct SceneSpec {
  double extent = 60.0;  // ground covers [-extent, extent]^2
  // RMS amplitude (m) and nominal wavelength (m) of a smooth ground undulation.
  double roughness = 0.0;
  double roughness_wavelength = 8.0;
  std::vector<Box> boxes;
  std::vector<Cylinder> cylinders;
  std::uint64_t seed = 1;
};

struct SensorModel {
  int beams = 64;
  double fov_up_deg = 2.0;
  double fov_down_deg = -24.8;
  double horizontal_resolution_deg = 0.17;
  double max_range = 120.0;
  double min_range = 0.5;
  double range_noise = 0.02;  // sigma, meters

  void validate() const {
    if (beams <= 0 || !(horizontal_resolution_deg > 0) || !(max_range > 0) || !(min_range >= 0) ||
        !(range_noise >= 0) || !(fov_up_deg > fov_down_deg) || !(fov_up_deg < 90.0) ||
        !(fov_down_deg > -90.0))
      throw Error(ErrorCode::kDegenerateInput, "invalid sensor model");
  }

  int azimuth_steps() const { return static_cast<int>(std::lround(360.0 / horizontal_resolution_deg)); }
  double elevation(int beam) const {
    if (beams == 1) return fov_up_deg * M_PI / 180.0;
    return (fov_up_deg + (fov_down_deg - fov_up_deg) * beam / (beams - 1)) * M_PI / 180.0;
  }
};

/// Smooth ground height field: a seeded sum of plane waves with the
/// requested RMS amplitude.
class GroundField {
 public:
  static constexpr int kWaves = 4;

  explicit GroundField(const SceneSpec& scene) : amplitude_(scene.roughness) {
    auto rng = derive_rng(scene.seed, 0x67726F756E64ULL);
    for (int k = 0; k < kWaves; ++k) {
      const double heading = rng.uniform(0.0, 2.0 * M_PI);
      const double wavelength = scene.roughness_wavelength * rng.uniform(0.75, 1.5);
      const double wavenumber = 2.0 * M_PI / wavelength;
      kx_[k] = wavenumber * std::cos(heading);
      ky_[k] = wavenumber * std::sin(heading);
      phase_[k] = rng.uniform(0.0, 2.0 * M_PI);
    }
  }

  double height(double x, double y) const {
    if (amplitude_ == 0.0) return 0.0;
    double h = 0.0;
    for (int k = 0; k < kWaves; ++k) h += std::cos(kx_[k] * x + ky_[k] * y + phase_[k]);
    return amplitude_ * std::sqrt(2.0 / kWaves) * h;
  }

 private:
  double amplitude_;
  double kx_[kWaves]{}, ky_[kWaves]{}, phase_[kWaves]{};
};

namespace detail {

// Primitives extend below the datum so undulating ground never exposes a gap.
inline constexpr double kPrimitiveFloor = -10.0;

inline std::optional<double> intersect_box(const Box& box, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double ox = o.x() - box.cx, oy = o.y() - box.cy;
  const Eigen::Vector3d lo_origin(c * ox + s * oy, -s * ox + c * oy, o.z());
  const Eigen::Vector3d ld(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
  const Eigen::Vector3d lo(-0.5 * box.size_x, -0.5 * box.size_y, kPrimitiveFloor);
  const Eigen::Vector3d hi(0.5 * box.size_x, 0.5 * box.size_y, box.height);
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (ld(i) == 0.0) {
      if (lo_origin(i) < lo(i) || lo_origin(i) > hi(i)) return std::nullopt;
      continue;
    }
    double a = (lo(i) - lo_origin(i)) / ld(i);
    double b = (hi(i) - lo_origin(i)) / ld(i);
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::nullopt;
  }
  return t0;
}

inline std::optional<double> intersect_cylinder(const Cylinder& cyl, const Eigen::Vector3d& o,
                                                const Eigen::Vector3d& d) {
  std::optional<double> best;
  const double ox = o.x() - cyl.cx, oy = o.y() - cyl.cy;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 0.0) {
    const double b = 2.0 * (ox * d.x() + oy * d.y());
    const double c = ox * ox + oy * oy - cyl.radius * cyl.radius;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double t = (-b - std::sqrt(disc)) / (2.0 * a);
      const double z = o.z() + t * d.z();
      if (t >= 0.0 && z >= kPrimitiveFloor && z <= cyl.height) best = t;
    }
  }
  if (d.z() != 0.0) {
    const double t = (cyl.height - o.z()) / d.z();
    const double x = ox + t * d.x(), y = oy + t * d.y();
    if (t >= 0.0 && x * x + y * y <= cyl.radius * cyl.radius && (!best || t < *best)) best = t;
  }
  return best;
}

inline std::optional<double> intersect_ground(const SceneSpec& scene, const GroundField& ground,
                                              const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  if (d.z() >= 0.0) return std::nullopt;
  double t = -o.z() / d.z();
  if (scene.roughness != 0.0) {
    // Fixed-point iteration on o_z + t d_z = h(o + t d); converges while the
    // ground slope along the ray is shallower than the ray itself.
    bool settled = false;
    for (int it = 0; it < 50 && !settled; ++it) {
      const Eigen::Vector3d p = o + t * d;
      const double next = (ground.height(p.x(), p.y()) - o.z()) / d.z();
      settled = std::abs(next - t) < 1e-10;
      t = next;
    }
    if (!settled || t < 0.0) return std::nullopt;
  }
  const Eigen::Vector3d p = o + t * d;
  if (std::abs(p.x()) > scene.extent || std::abs(p.y()) > scene.extent) return std::nullopt;
  return t;
}

}  // namespace detail

/// Distance along the unit ray (origin o, direction d, world frame) to the
/// first surface hit, if any.
inline std::optional<double> cast_ray(const SceneSpec& scene, const GroundField& ground, const Eigen::Vector3d& o,
                                      const Eigen::Vector3d& d) {
  std::optional<double> best = detail::intersect_ground(scene, ground, o, d);
  auto consider = [&](std::optional<double> t) {
    if (t && (!best || *t < *best)) best = t;
  };
  for (const auto& box : scene.boxes) consider(detail::intersect_box(box, o, d));
  for (const auto& cyl : scene.cylinders) consider(detail::intersect_cylinder(cyl, o, d));
  return best;
}

/// Spinning-LiDAR scan of the scene from `sensor_pose` (world <- sensor),
/// points in the sensor frame. Beams run top to bottom, azimuth from -pi;
/// range noise is drawn per (seed, frame, beam, azimuth) so the output does
/// not depend on the worker count.
inline Scan render_scan(const SceneSpec& scene, const SensorModel& sensor, const Pose& sensor_pose,
                        std::uint64_t frame_index = 0, int threads = 1) {
  sensor.validate();
  const GroundField ground(scene);
  const int n_az = sensor.azimuth_steps();
  std::vector<std::vector<Point3>> per_beam(sensor.beams);

  auto render_beam = [&](int beam) {
    const double el = sensor.elevation(beam);
    auto& out = per_beam[beam];
    for (int j = 0; j < n_az; ++j) {
      const double az = -M_PI + 2.0 * M_PI * j / n_az;
      const Eigen::Vector3d dir_sensor(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const Eigen::Vector3d dir_world = sensor_pose.R * dir_sensor;
      const auto t = cast_ray(scene, ground, sensor_pose.t, dir_world);
      if (!t || *t < sensor.min_range || *t > sensor.max_range) continue;
      double range = *t;
      if (sensor.range_noise > 0.0) {
        auto rng = derive_rng(scene.seed, frame_index + 1, static_cast<std::uint64_t>(beam) * n_az + j);
        range += sensor.range_noise * rng.normal();
      }
      out.push_back(range * dir_sensor);
    }
  };

  const int workers = std::max(1, std::min(threads, sensor.beams));
  if (workers == 1) {
    for (int b = 0; b < sensor.beams; ++b) render_beam(b);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int b = w; b < sensor.beams; b += workers) render_beam(b);
      });
  }

  Scan scan;
  scan.frame_index = frame_index;
  for (auto& beam : per_beam) scan.points.insert(scan.points.end(), beam.begin(), beam.end());
  return scan;
}

struct SyntheticSequence {
  std::vector<Scan> scans;
  Trajectory ground_truth;  // relative to the first sensor pose
};

inline SyntheticSequence render_sequence(const SceneSpec& scene, const SensorModel& sensor,
                                         const std::vector<Pose>& sensor_poses, int threads = 1) {
  SyntheticSequence seq;
  if (sensor_poses.empty()) return seq;
  const Pose first_inv = sensor_poses.front().inverse();
  for (std::size_t k = 0; k < sensor_poses.size(); ++k) {
    seq.scans.push_back(render_scan(scene, sensor, sensor_poses[k], k, threads));
    seq.ground_truth.push_back(k, k == 0 ? Pose::identity() : compose(first_inv, sensor_poses[k]));
  }
  return seq;
}

/// Height of the topmost surface at world (x, y).
inline double surface_height(const SceneSpec& scene, const GroundField& ground, double x, double y) {
  double h = ground.height(x, y);
  for (const auto& box : scene.boxes) {
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    const double lx = c * (x - box.cx) + s * (y - box.cy);
    const double ly = -s * (x - box.cx) + c * (y - box.cy);
    if (std::abs(lx) <= 0.5 * box.size_x && std::abs(ly) <= 0.5 * box.size_y) h = std::max(h, box.height);
  }
  for (const auto& cyl : scene.cylinders) {
    const double dx = x - cyl.cx, dy = y - cyl.cy;
    if (dx * dx + dy * dy <= cyl.radius * cyl.radius) h = std::max(h, cyl.height);
  }
  return h;
}

/// Dense top-down sampling of the scene around a planar sensor pose: a
/// jittered lattice with `samples_per_axis`^2 points per `spacing`-sized
/// square over [-half_width, half_width)^2 in the sensor frame, each point
/// at the surface height minus `sensor_height` plus Gaussian noise. With
/// spacing equal to the grid resolution and a cell-aligned window every cell
/// receives exactly samples_per_axis^2 points.
inline Scan sample_surface_scan(const SceneSpec& scene, const PlanarPose& sensor, double sensor_height,
                                double half_width, double spacing, int samples_per_axis, double noise,
                                std::uint64_t stream) {
  const GroundField ground(scene);
  const Pose world_from_sensor = planar_embed(sensor);
  auto rng = derive_rng(scene.seed, 0x73757266ULL, stream);
  const int cells = static_cast<int>(std::lround(2.0 * half_width / spacing));
  const double sub = spacing / samples_per_axis;
  Scan scan;
  scan.points.reserve(static_cast<std::size_t>(cells) * cells * samples_per_axis * samples_per_axis);
  for (int iy = 0; iy < cells * samples_per_axis; ++iy)
    for (int ix = 0; ix < cells * samples_per_axis; ++ix) {
      // Keep samples strictly inside their sub-square so they never straddle a cell boundary.
      const double x = -half_width + (ix + rng.uniform(0.01, 0.99)) * sub;
      const double y = -half_width + (iy + rng.uniform(0.01, 0.99)) * sub;
      const Eigen::Vector3d w = world_from_sensor * Eigen::Vector3d(x, y, 0.0);
      const double z = surface_height(scene, ground, w.x(), w.y()) - sensor_height +
                       (noise > 0.0 ? noise * rng.normal() : 0.0);
      scan.points.emplace_back(x, y, z);
    }
  return scan;
}

/// Random scene: boxes and cylinders scattered over [-spread, spread]^2
/// around `center`, rejecting placements within `clearance` of the keep-out
/// polyline (the sensor path).
struct SceneRecipe {
  std::uint64_t seed = 1;
  int boxes = 30;
  int cylinders = 15;
  double spread = 25.0;
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double roughness = 0.0;
  double roughness_wavelength = 8.0;
  double extent = 80.0;
  double min_height = 0.3;
  double max_height = 3.0;
  std::vector<Eigen::Vector2d> keep_out;  // polyline vertices
  double clearance = 2.0;
};

namespace detail {

inline double distance_to_polyline(const Eigen::Vector2d& p, const std::vector<Eigen::Vector2d>& line) {
  if (line.empty()) return std::numeric_limits<double>::infinity();
  if (line.size() == 1) return (p - line[0]).norm();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Eigen::Vector2d a = line[i], ab = line[i + 1] - line[i];
    const double len2 = ab.squaredNorm();
    const double s = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (a + s * ab - p).norm());
  }
  return best;
}

}  // namespace detail

inline SceneSpec random_scene(const SceneRecipe& recipe) {
  SceneSpec scene;
  scene.seed = recipe.seed;
  scene.extent = recipe.extent;
  scene.roughness = recipe.roughness;
  scene.roughness_wavelength = recipe.roughness_wavelength;
  auto rng = derive_rng(recipe.seed, 0x7363656E65ULL);
  auto place = [&](double radius) -> std::optional<Eigen::Vector2d> {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const Eigen::Vector2d c = recipe.center + Eigen::Vector2d(rng.uniform(-recipe.spread, recipe.spread),
                                                                rng.uniform(-recipe.spread, recipe.spread));
      if (detail::distance_to_polyline(c, recipe.keep_out) > radius + recipe.clearance) return c;
    }
    return std::nullopt;
  };
  for (int i = 0; i < recipe.boxes; ++i) {
    Box b;
    b.size_x = rng.uniform(0.8, 4.0);
    b.size_y = rng.uniform(0.8, 4.0);
    b.yaw = rng.uniform(-M_PI, M_PI);
    b.height = rng.uniform(recipe.min_height, recipe.max_height);
    if (auto c = place(0.5 * std::hypot(b.size_x, b.size_y))) {
      b.cx = c->x();
      b.cy = c->y();
      scene.boxes.push_back(b);
    }
  }
  for (int i = 0; i < recipe.cylinders; ++i) {
    Cylinder cyl;
    cyl.radius = rng.uniform(0.15, 0.8);
    cyl.height = rng.uniform(recipe.min_height, recipe.max_height);
    if (auto c = place(cyl.radius)) {
      cyl.cx = c->x();
      cyl.cy = c->y();
      scene.cylinders.push_back(cyl);
    }
  }
  return scene;
}

/// Sensor poses `step` meters apart along +x at `height`.
inline std::vector<Pose> straight_line_poses(int frames, double step, double height) {
  std::vector<Pose> poses;
  for (int k = 0; k < frames; ++k) {
    Pose p;
    p.t = Eigen::Vector3d(k * step, 0.0, height);
    poses.push_back(p);
  }
  return poses;
}

/// Counter-clockwise square of side `leg`, driven at `step` meters per frame
/// and turning 90 degrees in place over `turn_frames` frames at each corner.
/// The last pose returns to the start position.
inline std::vector<Pose> square_loop_poses(double leg, double step, int turn_frames, double height) {
  std::vector<Pose> poses;
  const int per_leg = static_cast<int>(std::lround(leg / step));
  Eigen::Vector2d pos = Eigen::Vector2d::Zero();
  double yaw = 0.0;
  auto emit = [&] {
    Pose p = planar_embed({pos.x(), pos.y(), yaw});
    p.t.z() = height;
    poses.push_back(p);
  };
  emit();
  for (int side = 0; side < 4; ++side) {
    const Eigen::Vector2d heading(std::cos(yaw), std::sin(yaw));
    const Eigen::Vector2d start = pos;
    for (int k = 1; k <= per_leg; ++k) {
      pos = start + heading * (leg * k / per_leg);
      emit();
    }
    if (side == 3) break;
    const double yaw0 = yaw;
    for (int k = 1; k <= turn_frames; ++k) {
      yaw = wrap_angle(yaw0 + 0.5 * M_PI * k / turn_frames);
      emit();
    }
  }
  return poses;
}

/// Square city block driven counter-clockwise from `origin`: a raised slab
/// inside the loop and sidewalk slabs outside it, each `curb_height` above
/// the road, leaving a road of half-width `road_half_width` along every leg.
inline void add_city_block(SceneSpec& scene, const Eigen::Vector2d& origin, double leg, double road_half_width,
                           double curb_height, double sidewalk_width = 10.0) {
  const double w = road_half_width, o = sidewalk_width;
  const double cx = origin.x() + 0.5 * leg, cy = origin.y() + 0.5 * leg;
  if (leg > 2.0 * w) scene.boxes.push_back({cx, cy, 0.0, leg - 2.0 * w, leg - 2.0 * w, curb_height});
  scene.boxes.push_back({cx, origin.y() - w - 0.5 * o, 0.0, leg + 2.0 * (w + o), o, curb_height});
  scene.boxes.push_back({cx, origin.y() + leg + w + 0.5 * o, 0.0, leg + 2.0 * (w + o), o, curb_height});
  scene.boxes.push_back({origin.x() - w - 0.5 * o, cy, 0.0, o, leg + 2.0 * w, curb_height});
  scene.boxes.push_back({origin.x() + leg + w + 0.5 * o, cy, 0.0, o, leg + 2.0 * w, curb_height});
}

// Scene spec text format, one `key = value` per line:
//   seed, extent, roughness, roughness_wavelength
//   box = cx cy yaw size_x size_y height          (repeatable)
//   cylinder = cx cy radius height                (repeatable)
//   sensor.beams, sensor.fov_up, sensor.fov_down, sensor.horizontal_resolution,
//   sensor.max_range, sensor.min_range, sensor.range_noise
//   random.boxes, random.cylinders, random.spread, random.min_height,
//   random.max_height, random.clearance, keep_out = x y (repeatable polyline)
//   block = x0 y0 leg road_half_width curb_height  (see add_city_block)
// random.* keys append seeded random primitives to the explicit ones.
struct SceneFile {
  SceneSpec scene;
  SensorModel sensor;
};

inline SceneFile parse_scene_file(const std::vector<KeyValue>& kvs) {
  SceneFile out;
  SceneRecipe recipe;
  recipe.boxes = recipe.cylinders = 0;
  bool random = false;
  for (const auto& kv : kvs) {
    const auto& k = kv.key;
    if (k == "seed") out.scene.seed = recipe.seed = static_cast<std::uint64_t>(parse_integer(kv));
    else if (k == "extent") out.scene.extent = parse_double(kv);
    else if (k == "roughness") out.scene.roughness = parse_double(kv);
    else if (k == "roughness_wavelength") out.scene.roughness_wavelength = parse_double(kv);
    else if (k == "box") {
      const auto v = parse_numbers(kv);
      if (v.size() != 6) throw Error(ErrorCode::kParseError, kv.source + ": box = cx cy yaw size_x size_y height");
      out.scene.boxes.push_back({v[0], v[1], v[2], v[3], v[4], v[5]});
    } else if (k == "cylinder") {
      const auto v = parse_numbers(kv);
      if (v.size() != 4) throw Error(ErrorCode::kParseError, kv.source + ": cylinder = cx cy radius height");
      out.scene.cylinders.push_back({v[0], v[1], v[2], v[3]});
    } else if (k == "sensor.beams") out.sensor.beams = static_cast<int>(parse_integer(kv));
    else if (k == "sensor.fov_up") out.sensor.fov_up_deg = parse_double(kv);
    else if (k == "sensor.fov_down") out.sensor.fov_down_deg = parse_double(kv);
    else if (k == "sensor.horizontal_resolution") out.sensor.horizontal_resolution_deg = parse_double(kv);
    else if (k == "sensor.max_range") out.sensor.max_range = parse_double(kv);
    else if (k == "sensor.min_range") out.sensor.min_range = parse_double(kv);
    else if (k == "sensor.range_noise") out.sensor.range_noise = parse_double(kv);
    else if (k == "random.boxes") { recipe.boxes = static_cast<int>(parse_integer(kv)); random = true; }
    else if (k == "random.cylinders") { recipe.cylinders = static_cast<int>(parse_integer(kv)); random = true; }
    else if (k == "random.spread") recipe.spread = parse_double(kv);
    else if (k == "random.min_height") recipe.min_height = parse_double(kv);
    else if (k == "random.max_height") recipe.max_height = parse_double(kv);
    else if (k == "random.clearance") recipe.clearance = parse_double(kv);
    else if (k == "random.center") {
      const auto v = parse_numbers(kv);
      if (v.size() != 2) throw Error(ErrorCode::kParseError, kv.source + ": random.center = x y");
      recipe.center = {v[0], v[1]};
    } else if (k == "block") {
      const auto v = parse_numbers(kv);
      if (v.size() != 5) throw Error(ErrorCode::kParseError, kv.source + ": block = x0 y0 leg road_half_width curb_height");
      add_city_block(out.scene, {v[0], v[1]}, v[2], v[3], v[4]);
    } else if (k == "keep_out") {
      const auto v = parse_numbers(kv);
      if (v.size() != 2) throw Error(ErrorCode::kParseError, kv.source + ": keep_out = x y");
      recipe.keep_out.emplace_back(v[0], v[1]);
    } else {
      throw Error(ErrorCode::kParseError, kv.source + ": unknown scene key '" + k + "'");
    }
  }
  if (random) {
    recipe.extent = out.scene.extent;
    recipe.roughness = out.scene.roughness;
    recipe.roughness_wavelength = out.scene.roughness_wavelength;
    const auto extra = random_scene(recipe);
    out.scene.boxes.insert(out.scene.boxes.end(), extra.boxes.begin(), extra.boxes.end());
    out.scene.cylinders.insert(out.scene.cylinders.end(), extra.cylinders.begin(), extra.cylinders.end());
  }
  out.sensor.validate();
  if (!(out.scene.extent > 0.0) || !(out.scene.roughness >= 0.0) || !(out.scene.roughness_wavelength > 0.0))
    throw Error(ErrorCode::kParseError, "invalid scene parameters");
  return out;
}

/// Writes the fully expanded scene (explicit primitives only), so reading it
/// back reproduces the same geometry without the random.* recipe.
inline void write_scene_file(const SceneFile& f, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  const auto& s = f.scene;
  out << "seed = " << s.seed << "\nextent = " << format_double(s.extent) << "\nroughness = "
      << format_double(s.roughness) << "\nroughness_wavelength = " << format_double(s.roughness_wavelength) << "\n";
  for (const auto& b : s.boxes)
    out << "box = " << format_double(b.cx) << ' ' << format_double(b.cy) << ' ' << format_double(b.yaw) << ' '
        << format_double(b.size_x) << ' ' << format_double(b.size_y) << ' ' << format_double(b.height) << "\n";
  for (const auto& c : s.cylinders)
    out << "cylinder = " << format_double(c.cx) << ' ' << format_double(c.cy) << ' ' << format_double(c.radius)
        << ' ' << format_double(c.height) << "\n";
  const auto& m = f.sensor;
  out << "sensor.beams = " << m.beams << "\nsensor.fov_up = " << format_double(m.fov_up_deg)
      << "\nsensor.fov_down = " << format_double(m.fov_down_deg)
      << "\nsensor.horizontal_resolution = " << format_double(m.horizontal_resolution_deg)
      << "\nsensor.max_range = " << format_double(m.max_range) << "\nsensor.min_range = "
      << format_double(m.min_range) << "\nsensor.range_noise = " << format_double(m.range_noise) << "\n";
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

// Trajectory spec: type = static | line | square, frames, step, leg,
// turn_frames, height.
inline std::vector<Pose> parse_trajectory_spec(const std::vector<KeyValue>& kvs) {
  std::string type = "line";
  int frames = 10;
  int turn_frames = 9;
  double step = 0.5, leg = 25.0, height = 1.7;
  for (const auto& kv : kvs) {
    if (kv.key == "type") type = kv.value;
    else if (kv.key == "frames") frames = static_cast<int>(parse_integer(kv));
    else if (kv.key == "turn_frames") turn_frames = static_cast<int>(parse_integer(kv));
    else if (kv.key == "step") step = parse_double(kv);
    else if (kv.key == "leg") leg = parse_double(kv);
    else if (kv.key == "height") height = parse_double(kv);
    else throw Error(ErrorCode::kParseError, kv.source + ": unknown trajectory key '" + kv.key + "'");
  }
  if (frames < 1 || turn_frames < 1 || !(step > 0.0) || !(leg > 0.0))
    throw Error(ErrorCode::kParseError, "invalid trajectory parameters");
  if (type == "static") return straight_line_poses(frames, 0.0, height);
  if (type == "line") return straight_line_poses(frames, step, height);
  if (type == "square") return square_loop_poses(leg, step, turn_frames, height);
  throw Error(ErrorCode::kParseError, "unknown trajectory type '" + type + "'");
}

}  // namespace dlo
