#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlo/error.hpp"
#include "dlo/ground.hpp"
#include "dlo/heightgrid.hpp"
#include "dlo/keyvalue.hpp"
#include "dlo/lie.hpp"
#include "dlo/registration.hpp"
#include "dlo/trajectory.hpp"

namespace dlo {

enum class MotionPrior { kIdentity, kConstantVelocity };

inline std::string to_string(MotionPrior prior) {
  return prior == MotionPrior::kIdentity ? "identity" : "constant-velocity";
}

inline MotionPrior parse_motion_prior(const std::string& name) {
  if (name == "identity") return MotionPrior::kIdentity;
  if (name == "constant-velocity") return MotionPrior::kConstantVelocity;
  throw Error(ErrorCode::kParseError, "unknown motion prior '" + name + "'");
}

struct OdometryConfig {
  SolverConfig solver;
  GridConfig grid;
  GroundConfig ground;
  MotionPrior motion_prior = MotionPrior::kConstantVelocity;
  bool pitch_compensation = true;

  void validate() const {
    solver.validate();
    grid.validate();
  }
};

struct FrameDiagnostics {
  std::uint64_t frame_index = 0;
  double runtime_s = 0.0;       // leveling + gridding + registration
  double grid_build_s = 0.0;
  double registration_s = 0.0;
  std::size_t points = 0;
  std::size_t residual_count = 0;
  int iterations = 0;
  double final_cost = 0.0;
  double condition_estimate = 0.0;
  bool converged = false;
  bool fallback = false;  // motion prior used instead of the registration
  bool ground_found = false;
  double roll_correction = 0.0;
  double pitch_correction = 0.0;
  std::string error;
};

/// Frame-to-frame height-grid odometry. Each new scan is leveled, gridded
/// and registered against the previous grid; the absolute pose chains the
/// inverse of the estimated grid warp.
class Odometry {
 public:
  explicit Odometry(const OdometryConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

  const FrameDiagnostics& process(const Scan& scan) {
    using Clock = std::chrono::steady_clock;
    if (!trajectory_.empty() && scan.frame_index <= trajectory_.entries.back().frame_index)
      throw Error(ErrorCode::kDegenerateInput, "frame indices must be strictly increasing");

    FrameDiagnostics diag;
    diag.frame_index = scan.frame_index;
    diag.points = scan.points.size();
    const auto t0 = Clock::now();

    std::optional<PitchCompensation> leveled;
    if (cfg_.pitch_compensation) {
      leveled = pitch_compensate(scan, cfg_.ground);
      diag.ground_found = leveled->ground_found;
      diag.roll_correction = leveled->roll;
      diag.pitch_correction = leveled->pitch;
    }
    HeightGrid grid = build_height_grid(leveled ? leveled->scan : scan, cfg_.grid);
    const auto t1 = Clock::now();
    diag.grid_build_s = std::chrono::duration<double>(t1 - t0).count();

    if (!previous_grid_) {
      trajectory_.push_back(scan.frame_index, Pose::identity(), scan.timestamp);
      diag.converged = true;
    } else {
      const Pose prior = cfg_.motion_prior == MotionPrior::kConstantVelocity ? last_warp_ : Pose::identity();
      Pose warp = prior;
      try {
        const auto result = register_grids(*previous_grid_, grid, prior, cfg_.solver);
        diag.residual_count = result.residual_count;
        diag.iterations = result.iterations;
        diag.final_cost = result.final_cost;
        diag.condition_estimate = result.condition_estimate;
        diag.converged = result.converged;
        if (result.converged) {
          warp = result.relative_pose;
        } else {
          diag.error = "NotConverged";
        }
      } catch (const Error& e) {
        diag.error = e.what();
      }
      diag.fallback = !diag.converged;
      diag.registration_s = std::chrono::duration<double>(Clock::now() - t1).count();
      last_warp_ = warp;
      trajectory_.push_back(scan.frame_index, compose(trajectory_.entries.back().pose, warp.inverse()),
                            scan.timestamp);
    }
    previous_grid_ = std::move(grid);
    diag.runtime_s = std::chrono::duration<double>(Clock::now() - t0).count();
    diagnostics_.push_back(diag);
    return diagnostics_.back();
  }

  const Trajectory& trajectory() const { return trajectory_; }
  const std::vector<FrameDiagnostics>& diagnostics() const { return diagnostics_; }
  const OdometryConfig& config() const { return cfg_; }

 private:
  OdometryConfig cfg_;
  std::optional<HeightGrid> previous_grid_;
  Pose last_warp_;
  Trajectory trajectory_;
  std::vector<FrameDiagnostics> diagnostics_;
};

struct OdometryRun {
  Trajectory trajectory;
  std::vector<FrameDiagnostics> diagnostics;
};

inline OdometryRun run_odometry(std::span<const Scan> scans, const OdometryConfig& cfg) {
  if (scans.size() < 2) throw Error(ErrorCode::kDegenerateInput, "odometry needs at least two scans");
  Odometry odom(cfg);
  for (const auto& scan : scans) odom.process(scan);
  return {odom.trajectory(), odom.diagnostics()};
}

inline void write_diagnostics_csv(const std::vector<FrameDiagnostics>& diags, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << "frame,runtime_s,grid_build_s,registration_s,points,residuals,iterations,final_cost,condition,"
         "converged,fallback,ground_found,roll_correction,pitch_correction,error\n";
  for (const auto& d : diags) {
    std::string err = d.error;
    for (char& c : err)
      if (c == ',' || c == '\n') c = ';';
    out << d.frame_index << ',' << format_double(d.runtime_s) << ',' << format_double(d.grid_build_s) << ','
        << format_double(d.registration_s) << ',' << d.points << ',' << d.residual_count << ',' << d.iterations
        << ',' << format_double(d.final_cost) << ',' << format_double(d.condition_estimate) << ','
        << (d.converged ? 1 : 0) << ',' << (d.fallback ? 1 : 0) << ',' << (d.ground_found ? 1 : 0) << ','
        << format_double(d.roll_correction) << ',' << format_double(d.pitch_correction) << ',' << err << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

/// Reads the columns write_diagnostics_csv produces; the error text is kept
/// as written (commas replaced).
inline std::vector<FrameDiagnostics> read_diagnostics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kFormatError, path.string() + ": empty diagnostics file");
  std::vector<FrameDiagnostics> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (int i = 0; i < 14; ++i) {
      const auto comma = line.find(',', start);
      if (comma == std::string::npos)
        throw Error(ErrorCode::kFormatError, path.string() + ":" + std::to_string(line_no) + ": expected 15 columns");
      f.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    f.push_back(line.substr(start));
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto num = [&](int i) { return parse_double({"column", f[i], where}); };
    auto integer = [&](int i) { return parse_integer({"column", f[i], where}); };
    FrameDiagnostics d;
    d.frame_index = static_cast<std::uint64_t>(integer(0));
    d.runtime_s = num(1);
    d.grid_build_s = num(2);
    d.registration_s = num(3);
    d.points = static_cast<std::size_t>(integer(4));
    d.residual_count = static_cast<std::size_t>(integer(5));
    d.iterations = static_cast<int>(integer(6));
    d.final_cost = num(7);
    d.condition_estimate = num(8);
    d.converged = integer(9) != 0;
    d.fallback = integer(10) != 0;
    d.ground_found = integer(11) != 0;
    d.roll_correction = num(12);
    d.pitch_correction = num(13);
    d.error = f[14];
    out.push_back(d);
  }
  return out;
}

}  // namespace dlo
