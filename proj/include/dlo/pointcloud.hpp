#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <charconv>
#include <vector>

#include <Eigen/Core>

#include "dlo/error.hpp"

namespace dlo {

/// A LiDAR return in sensor-frame Cartesian meters.
using Point3 = Eigen::Vector3d;

/// Range / azimuth / elevation triple. Construction validates the domain:
/// range finite and >= 0, azimuth in [-pi, pi), elevation in (-pi/2, pi/2).
class SphericalPoint {
 public:
  SphericalPoint(double range, double azimuth, double elevation)
      : range_(range), azimuth_(azimuth), elevation_(elevation) {
    if (!std::isfinite(range) || range < 0.0)
      throw Error(ErrorCode::kDegenerateInput, "range must be finite and >= 0");
    if (!(azimuth >= -M_PI && azimuth < M_PI))
      throw Error(ErrorCode::kDegenerateInput, "azimuth outside [-pi, pi)");
    if (!(elevation > -M_PI_2 && elevation < M_PI_2))
      throw Error(ErrorCode::kDegenerateInput, "elevation outside (-pi/2, pi/2)");
  }

  double range() const { return range_; }
  double azimuth() const { return azimuth_; }
  double elevation() const { return elevation_; }

 private:
  double range_;
  double azimuth_;
  double elevation_;
};

struct Scan {
  std::vector<Point3> points;
  std::uint64_t frame_index = 0;
  std::optional<double> timestamp;
  // Non-finite records skipped while reading.
  std::size_t dropped_points = 0;
};

inline Point3 spherical_to_cartesian(const SphericalPoint& p) {
  const double planar = p.range() * std::cos(p.elevation());
  return {planar * std::cos(p.azimuth()), planar * std::sin(p.azimuth()),
          p.range() * std::sin(p.elevation())};
}

/// Throws DegenerateInput for points on the z axis (including the origin),
/// where the azimuth is undefined and the elevation sits on the pole.
inline SphericalPoint cartesian_to_spherical(const Point3& p) {
  if (!p.allFinite()) throw Error(ErrorCode::kDegenerateInput, "non-finite point");
  const double planar = std::hypot(p.x(), p.y());
  if (planar == 0.0)
    throw Error(ErrorCode::kDegenerateInput, "point on the z axis has no azimuth");
  double azimuth = std::atan2(p.y(), p.x());
  if (azimuth >= M_PI) azimuth = -M_PI;
  return {p.norm(), azimuth, std::atan2(p.z(), planar)};
}

enum class ScanFormat { kKittiBin, kXyzText };

inline ScanFormat parse_scan_format(std::string_view name) {
  if (name == "kitti-bin") return ScanFormat::kKittiBin;
  if (name == "xyz-text") return ScanFormat::kXyzText;
  throw Error(ErrorCode::kParseError, "unknown scan format '" + std::string(name) + "'");
}

namespace detail {

inline float load_le_float(const unsigned char* bytes) {
  std::uint32_t bits;
  std::memcpy(&bits, bytes, sizeof bits);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

inline void store_le_float(float value, unsigned char* bytes) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  std::memcpy(bytes, &bits, sizeof bits);
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIoError, "read failed for " + path.string());
  return bytes;
}

inline void add_point(Scan& scan, const Point3& p) {
  if (p.allFinite())
    scan.points.push_back(p);
  else
    ++scan.dropped_points;
}

inline Scan parse_kitti_bin(const std::vector<unsigned char>& bytes, const std::string& name) {
  constexpr std::size_t kRecord = 4 * sizeof(float);
  if (bytes.size() % kRecord != 0)
    throw Error(ErrorCode::kFormatError,
                name + ": size " + std::to_string(bytes.size()) +
                    " is not a multiple of the 16-byte record");
  Scan scan;
  scan.points.reserve(bytes.size() / kRecord);
  for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
    // The fourth float (intensity) is skipped.
    add_point(scan, Point3(load_le_float(&bytes[off]), load_le_float(&bytes[off + 4]),
                           load_le_float(&bytes[off + 8])));
  }
  return scan;
}

inline Scan parse_xyz_text(std::string_view text, const std::string& name) {
  Scan scan;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);

    double xyz[3];
    int found = 0;
    const char* it = line.data();
    const char* end = line.data() + line.size();
    while (found < 3) {
      while (it != end && std::isspace(static_cast<unsigned char>(*it))) ++it;
      if (it == end) break;
      auto [next, ec] = std::from_chars(it, end, xyz[found]);
      if (ec != std::errc{})
        throw Error(ErrorCode::kFormatError, name + ":" + std::to_string(line_no) + ": bad number");
      it = next;
      ++found;
    }
    if (found == 0) continue;
    if (found < 3)
      throw Error(ErrorCode::kFormatError,
                  name + ":" + std::to_string(line_no) + ": expected 'x y z'");
    add_point(scan, Point3(xyz[0], xyz[1], xyz[2]));
  }
  return scan;
}

}  // namespace detail

/// Loads a scan. kitti-bin is packed little-endian float32 (x, y, z, intensity)
/// records without a header; xyz-text is one "x y z" triple per line with '#'
/// comments. Non-finite points are dropped and counted in Scan::dropped_points.
inline Scan read_scan_file(const std::filesystem::path& path, ScanFormat format) {
  const auto bytes = detail::read_file_bytes(path);
  if (format == ScanFormat::kKittiBin) return detail::parse_kitti_bin(bytes, path.string());
  return detail::parse_xyz_text(
      std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path.string());
}

inline void write_kitti_bin(const Scan& scan, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes(scan.points.size() * 16);
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const auto& p = scan.points[i];
    unsigned char* rec = &bytes[i * 16];
    detail::store_le_float(static_cast<float>(p.x()), rec);
    detail::store_le_float(static_cast<float>(p.y()), rec + 4);
    detail::store_le_float(static_cast<float>(p.z()), rec + 8);
    detail::store_le_float(0.0F, rec + 12);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

}  // namespace dlo
