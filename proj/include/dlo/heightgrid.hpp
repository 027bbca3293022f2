#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dlo/error.hpp"
#include "dlo/pointcloud.hpp"

namespace dlo {

/// Geometry of a 2.5D grid. A point (x, y) falls into cell
/// (floor(x / f_x + c_x), floor(y / f_y + c_y)); u indexes columns (x) and
/// v indexes rows (y).
struct GridConfig {
  int rows = 400;
  int cols = 400;
  double f_x = 0.1;  // meters per cell
  double f_y = 0.1;
  double c_x = 200.0;  // cell offset of the sensor origin
  double c_y = 200.0;
  // Points higher than this (sensor frame, meters) are discarded before gridding.
  double max_height = 3.0;

  void validate() const {
    if (rows <= 0 || cols <= 0)
      throw Error(ErrorCode::kDegenerateInput, "grid rows and cols must be positive");
    if (!(f_x > 0.0) || !(f_y > 0.0))
      throw Error(ErrorCode::kDegenerateInput, "grid resolution must be positive");
    if (!std::isfinite(c_x) || !std::isfinite(c_y))
      throw Error(ErrorCode::kDegenerateInput, "grid center must be finite");
  }

  /// Square grid of `size` cells per side centered on the sensor.
  static GridConfig square(int size, double resolution) {
    GridConfig cfg;
    cfg.rows = cfg.cols = size;
    cfg.f_x = cfg.f_y = resolution;
    cfg.c_x = cfg.c_y = 0.5 * size;
    return cfg;
  }

  bool same_geometry(const GridConfig& o) const {
    return rows == o.rows && cols == o.cols && f_x == o.f_x && f_y == o.f_y &&
           c_x == o.c_x && c_y == o.c_y;
  }
};

struct CellIndex {
  int u = 0;
  int v = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

inline constexpr std::uint32_t kMinPointsPerCell = 3;

class HeightGrid {
 public:
  HeightGrid() = default;
  explicit HeightGrid(const GridConfig& cfg)
      : cfg_(cfg),
        mean_(static_cast<std::size_t>(cfg.rows) * cfg.cols, 0.0),
        count_(static_cast<std::size_t>(cfg.rows) * cfg.cols, 0) {
    cfg.validate();
  }

  const GridConfig& config() const { return cfg_; }
  int rows() const { return cfg_.rows; }
  int cols() const { return cfg_.cols; }

  bool in_bounds(int u, int v) const { return u >= 0 && v >= 0 && u < cfg_.cols && v < cfg_.rows; }
  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(v) * cfg_.cols + static_cast<std::size_t>(u);
  }

  double mean(int u, int v) const { return mean_[index(u, v)]; }
  std::uint32_t count(int u, int v) const { return count_[index(u, v)]; }
  bool valid(int u, int v) const { return in_bounds(u, v) && count_[index(u, v)] >= kMinPointsPerCell; }

  std::size_t valid_cell_count() const {
    return static_cast<std::size_t>(
        std::count_if(count_.begin(), count_.end(), [](auto n) { return n >= kMinPointsPerCell; }));
  }

  // Points rejected while building (outside the window or above max_height).
  std::size_t skipped_out_of_bounds = 0;
  std::size_t skipped_above_ceiling = 0;

  std::vector<double>& mutable_means() { return mean_; }
  std::vector<std::uint32_t>& mutable_counts() { return count_; }
  const std::vector<double>& means() const { return mean_; }
  const std::vector<std::uint32_t>& counts() const { return count_; }

 private:
  GridConfig cfg_;
  std::vector<double> mean_;
  std::vector<std::uint32_t> count_;
};

inline std::optional<CellIndex> try_project_point(const Point3& p, const GridConfig& cfg) {
  const double fu = std::floor(p.x() / cfg.f_x + cfg.c_x);
  const double fv = std::floor(p.y() / cfg.f_y + cfg.c_y);
  if (!(fu >= 0.0 && fu < cfg.cols && fv >= 0.0 && fv < cfg.rows)) return std::nullopt;
  return CellIndex{static_cast<int>(fu), static_cast<int>(fv)};
}

inline CellIndex project_point(const Point3& p, const GridConfig& cfg) {
  if (auto cell = try_project_point(p, cfg)) return *cell;
  throw Error(ErrorCode::kOutOfBounds, "point projects outside the grid");
}

/// Metric (x, y) of a cell center; z is left to the caller.
inline Eigen::Vector2d cell_center(const GridConfig& cfg, int u, int v) {
  return {(u + 0.5 - cfg.c_x) * cfg.f_x, (v + 0.5 - cfg.c_y) * cfg.f_y};
}

/// Continuous grid coordinates in which integer values sit on cell centers,
/// the nodes used by bilinear_sample.
inline Eigen::Vector2d to_grid_coords(const GridConfig& cfg, double x, double y) {
  return {x / cfg.f_x + cfg.c_x - 0.5, y / cfg.f_y + cfg.c_y - 0.5};
}

/// Heights are accumulated as integers in units of kHeightQuantum meters.
inline constexpr double kHeightQuantum = 0x1.0p-40;
/// Points with |z| at or above this (meters) cannot be accumulated and count
/// as out of bounds.
inline constexpr double kMaxAbsHeight = 0x1.0p22;

/// Builds the height-expectation grid: every cell holds the mean z of the
/// points falling into it and is valid once it has at least three points.
///
/// Each z is rounded to a multiple of kHeightQuantum and summed exactly in a
/// 128-bit integer, so the result is bit-identical for any ordering of the
/// scan and costs O(1) per point.
inline HeightGrid build_height_grid(const Scan& scan, const GridConfig& cfg) {
  HeightGrid grid(cfg);
  std::vector<__int128> sums(grid.means().size(), 0);
  auto& counts = grid.mutable_counts();
  for (const auto& p : scan.points) {
    if (p.z() > cfg.max_height) {
      ++grid.skipped_above_ceiling;
      continue;
    }
    const auto cell = try_project_point(p, cfg);
    if (!cell || !(std::abs(p.z()) < kMaxAbsHeight)) {
      ++grid.skipped_out_of_bounds;
      continue;
    }
    const std::size_t c = grid.index(cell->u, cell->v);
    sums[c] += std::llround(p.z() / kHeightQuantum);
    ++counts[c];
  }
  auto& means = grid.mutable_means();
  for (std::size_t c = 0; c < sums.size(); ++c)
    if (counts[c] > 0) means[c] = static_cast<double>(sums[c]) / counts[c] * kHeightQuantum;
  return grid;
}

/// Halves the resolution: each coarse cell aggregates the points of its 2x2
/// children, which equals re-gridding the original points at twice the cell
/// size. A trailing odd row or column is dropped.
inline HeightGrid downsample(const HeightGrid& fine) {
  GridConfig cfg = fine.config();
  cfg.rows = fine.rows() / 2;
  cfg.cols = fine.cols() / 2;
  cfg.f_x *= 2.0;
  cfg.f_y *= 2.0;
  cfg.c_x *= 0.5;
  cfg.c_y *= 0.5;
  HeightGrid coarse(cfg);
  auto& means = coarse.mutable_means();
  auto& counts = coarse.mutable_counts();
  for (int v = 0; v < cfg.rows; ++v) {
    for (int u = 0; u < cfg.cols; ++u) {
      double sum = 0.0;
      std::uint32_t n = 0;
      for (int dv = 0; dv < 2; ++dv)
        for (int du = 0; du < 2; ++du) {
          const auto k = fine.count(2 * u + du, 2 * v + dv);
          if (k == 0) continue;
          sum += fine.mean(2 * u + du, 2 * v + dv) * k;
          n += k;
        }
      const auto idx = coarse.index(u, v);
      counts[idx] = n;
      means[idx] = n > 0 ? sum / n : 0.0;
    }
  }
  return coarse;
}

/// Forward-difference gradient (mu(u+1,v) - mu(u,v), mu(u,v+1) - mu(u,v)) in
/// meters per cell; empty unless the cell and both forward neighbors are valid.
inline std::optional<Eigen::Vector2d> try_grid_gradient(const HeightGrid& g, int u, int v) {
  if (!g.valid(u, v) || !g.valid(u + 1, v) || !g.valid(u, v + 1)) return std::nullopt;
  const double m = g.mean(u, v);
  return Eigen::Vector2d(g.mean(u + 1, v) - m, g.mean(u, v + 1) - m);
}

inline Eigen::Vector2d grid_gradient(const HeightGrid& g, CellIndex c) {
  if (!g.in_bounds(c.u, c.v)) throw Error(ErrorCode::kOutOfBounds, "cell outside the grid");
  if (auto grad = try_grid_gradient(g, c.u, c.v)) return *grad;
  throw Error(ErrorCode::kInvalidNeighborhood, "gradient needs the cell and its forward neighbors valid");
}

struct SelectedCell {
  CellIndex cell;
  Eigen::Vector2d gradient;
};

using SelectedCells = std::vector<SelectedCell>;

/// Semi-dense selection: valid cells whose gradient magnitude exceeds
/// `threshold` (meters per cell), in row-major order.
inline SelectedCells select_semi_dense_cells(const HeightGrid& g, double threshold) {
  if (!(threshold > 0.0)) throw Error(ErrorCode::kDegenerateInput, "selection threshold must be > 0");
  SelectedCells out;
  const double threshold2 = threshold * threshold;
  for (int v = 0; v < g.rows(); ++v)
    for (int u = 0; u < g.cols(); ++u)
      if (auto grad = try_grid_gradient(g, u, v); grad && grad->squaredNorm() > threshold2)
        out.push_back({{u, v}, *grad});
  return out;
}

struct BilinearSample {
  double value = 0.0;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();  // d value / d (u, v)
};

/// Bilinear blend of the four cell means around (u, v), plus its exact
/// derivative, i.e. the forward differences of the two bracketing rows
/// (columns) interpolated along the other axis. Empty when any support cell
/// is invalid or out of bounds.
inline std::optional<BilinearSample> try_bilinear(const HeightGrid& g, double u, double v) {
  const double fu = std::floor(u);
  const double fv = std::floor(v);
  if (!(fu >= 0.0 && fv >= 0.0 && fu + 1.0 < g.cols() && fv + 1.0 < g.rows())) return std::nullopt;
  const int u0 = static_cast<int>(fu);
  const int v0 = static_cast<int>(fv);
  if (!g.valid(u0, v0) || !g.valid(u0 + 1, v0) || !g.valid(u0, v0 + 1) || !g.valid(u0 + 1, v0 + 1))
    return std::nullopt;
  const double a = u - fu;
  const double b = v - fv;
  const double m00 = g.mean(u0, v0);
  const double m10 = g.mean(u0 + 1, v0);
  const double m01 = g.mean(u0, v0 + 1);
  const double m11 = g.mean(u0 + 1, v0 + 1);
  BilinearSample s;
  s.value = (1.0 - b) * ((1.0 - a) * m00 + a * m10) + b * ((1.0 - a) * m01 + a * m11);
  s.gradient.x() = (1.0 - b) * (m10 - m00) + b * (m11 - m01);
  s.gradient.y() = (1.0 - a) * (m01 - m00) + a * (m11 - m10);
  return s;
}

inline double bilinear_sample(const HeightGrid& g, double u, double v) {
  if (auto s = try_bilinear(g, u, v)) return s->value;
  throw Error(ErrorCode::kInvalidNeighborhood, "bilinear support incomplete");
}

inline Eigen::Vector2d bilinear_gradient(const HeightGrid& g, double u, double v) {
  if (auto s = try_bilinear(g, u, v)) return s->gradient;
  throw Error(ErrorCode::kInvalidNeighborhood, "bilinear support incomplete");
}

// Binary layout, all little-endian: uint32 rows, uint32 cols, float64 f_x,
// f_y, c_x, c_y, then rows*cols float64 means and rows*cols uint32 counts,
// both row-major.
namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw Error(ErrorCode::kFormatError, "truncated grid file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline void write_height_grid(const HeightGrid& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  const auto& cfg = g.config();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.rows));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.cols));
  for (double value : {cfg.f_x, cfg.f_y, cfg.c_x, cfg.c_y}) detail::put_le(out, value);
  for (double m : g.means()) detail::put_le(out, m);
  for (std::uint32_t n : g.counts()) detail::put_le(out, n);
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

inline HeightGrid read_height_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  GridConfig cfg;
  cfg.rows = static_cast<int>(detail::get_le<std::uint32_t>(in));
  cfg.cols = static_cast<int>(detail::get_le<std::uint32_t>(in));
  cfg.f_x = detail::get_le<double>(in);
  cfg.f_y = detail::get_le<double>(in);
  cfg.c_x = detail::get_le<double>(in);
  cfg.c_y = detail::get_le<double>(in);
  if (cfg.rows <= 0 || cfg.cols <= 0 || static_cast<long long>(cfg.rows) * cfg.cols > (1LL << 30))
    throw Error(ErrorCode::kFormatError, "implausible grid dimensions in " + path.string());
  HeightGrid g(cfg);
  for (double& m : g.mutable_means()) m = detail::get_le<double>(in);
  for (std::uint32_t& n : g.mutable_counts()) n = detail::get_le<std::uint32_t>(in);
  return g;
}

}  // namespace dlo
