#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dlo/error.hpp"
#include "dlo/keyvalue.hpp"
#include "dlo/odometry.hpp"

namespace dlo {

// Flat `key = value` configuration. Keys mirror the struct fields:
//   grid.{rows, cols, f_x, f_y, c_x, c_y, max_height}, grid.resolution sets f_x and f_y
//   solver.{max_iterations, update_norm_tolerance, cost_decrease_tolerance, gradient_threshold,
//           min_residuals, mode, huber_delta, pyramid_levels, max_step_halvings, max_condition,
//           stall_tolerance, min_inlier_fraction, threads}
//   ground.{band_max_z, inlier_distance, iterations, min_inlier_fraction, max_tilt_deg, seed}
//   motion_prior, pitch_compensation
// When rows/cols change and the principal point is not given, it is
// re-centered on the grid.

inline void apply_config(OdometryConfig& cfg, const std::vector<KeyValue>& kvs) {
  bool cx_set = false, cy_set = false, cols_set = false, rows_set = false;
  auto as_int = [](const KeyValue& kv) { return static_cast<int>(parse_integer(kv)); };
  for (const auto& kv : kvs) {
    const auto& k = kv.key;
    auto& g = cfg.grid;
    auto& s = cfg.solver;
    auto& gr = cfg.ground;
    if (k == "grid.rows") { g.rows = as_int(kv); rows_set = true; }
    else if (k == "grid.cols") { g.cols = as_int(kv); cols_set = true; }
    else if (k == "grid.f_x") g.f_x = parse_double(kv);
    else if (k == "grid.f_y") g.f_y = parse_double(kv);
    else if (k == "grid.resolution") g.f_x = g.f_y = parse_double(kv);
    else if (k == "grid.c_x") { g.c_x = parse_double(kv); cx_set = true; }
    else if (k == "grid.c_y") { g.c_y = parse_double(kv); cy_set = true; }
    else if (k == "grid.max_height") g.max_height = parse_double(kv);
    else if (k == "solver.max_iterations") s.max_iterations = as_int(kv);
    else if (k == "solver.update_norm_tolerance") s.update_norm_tolerance = parse_double(kv);
    else if (k == "solver.cost_decrease_tolerance") s.cost_decrease_tolerance = parse_double(kv);
    else if (k == "solver.gradient_threshold") s.gradient_threshold = parse_double(kv);
    else if (k == "solver.min_residuals") s.min_residuals = static_cast<std::size_t>(parse_integer(kv));
    else if (k == "solver.mode") {
      try {
        s.mode = parse_dof_mode(kv.value);
      } catch (const Error& e) {
        throw Error(ErrorCode::kParseError, kv.source + ": " + e.what());
      }
    } else if (k == "solver.huber_delta") s.huber_delta = parse_double(kv);
    else if (k == "solver.pyramid_levels") s.pyramid_levels = as_int(kv);
    else if (k == "solver.max_step_halvings") s.max_step_halvings = as_int(kv);
    else if (k == "solver.max_condition") s.max_condition = parse_double(kv);
    else if (k == "solver.stall_tolerance") s.stall_tolerance = parse_double(kv);
    else if (k == "solver.min_inlier_fraction") s.min_inlier_fraction = parse_double(kv);
    else if (k == "solver.threads") s.threads = as_int(kv);
    else if (k == "ground.band_max_z") gr.band_max_z = parse_double(kv);
    else if (k == "ground.inlier_distance") gr.inlier_distance = parse_double(kv);
    else if (k == "ground.iterations") gr.iterations = as_int(kv);
    else if (k == "ground.min_inlier_fraction") gr.min_inlier_fraction = parse_double(kv);
    else if (k == "ground.max_tilt_deg") gr.max_tilt_deg = parse_double(kv);
    else if (k == "ground.seed") gr.seed = static_cast<std::uint64_t>(parse_integer(kv));
    else if (k == "motion_prior") {
      try {
        cfg.motion_prior = parse_motion_prior(kv.value);
      } catch (const Error& e) {
        throw Error(ErrorCode::kParseError, kv.source + ": " + e.what());
      }
    } else if (k == "pitch_compensation") cfg.pitch_compensation = parse_bool(kv);
    else throw Error(ErrorCode::kParseError, kv.source + ": unknown configuration key '" + k + "'");
  }
  if (cols_set && !cx_set) cfg.grid.c_x = 0.5 * cfg.grid.cols;
  if (rows_set && !cy_set) cfg.grid.c_y = 0.5 * cfg.grid.rows;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kParseError, std::string("invalid configuration: ") + e.what());
  }
}

inline OdometryConfig load_config(const std::filesystem::path& path) {
  OdometryConfig cfg;
  apply_config(cfg, read_key_value_file(path));
  return cfg;
}

/// Every key with its current value, in the order accepted by apply_config.
inline std::vector<std::pair<std::string, std::string>> config_entries(const OdometryConfig& cfg) {
  const auto& g = cfg.grid;
  const auto& s = cfg.solver;
  const auto& gr = cfg.ground;
  auto d = [](double x) { return format_double(x); };
  return {
      {"grid.rows", std::to_string(g.rows)},
      {"grid.cols", std::to_string(g.cols)},
      {"grid.f_x", d(g.f_x)},
      {"grid.f_y", d(g.f_y)},
      {"grid.c_x", d(g.c_x)},
      {"grid.c_y", d(g.c_y)},
      {"grid.max_height", d(g.max_height)},
      {"solver.max_iterations", std::to_string(s.max_iterations)},
      {"solver.update_norm_tolerance", d(s.update_norm_tolerance)},
      {"solver.cost_decrease_tolerance", d(s.cost_decrease_tolerance)},
      {"solver.gradient_threshold", d(s.gradient_threshold)},
      {"solver.min_residuals", std::to_string(s.min_residuals)},
      {"solver.mode", to_string(s.mode)},
      {"solver.huber_delta", d(s.huber_delta)},
      {"solver.pyramid_levels", std::to_string(s.pyramid_levels)},
      {"solver.max_step_halvings", std::to_string(s.max_step_halvings)},
      {"solver.max_condition", d(s.max_condition)},
      {"solver.stall_tolerance", d(s.stall_tolerance)},
      {"solver.min_inlier_fraction", d(s.min_inlier_fraction)},
      {"solver.threads", std::to_string(s.threads)},
      {"ground.band_max_z", d(gr.band_max_z)},
      {"ground.inlier_distance", d(gr.inlier_distance)},
      {"ground.iterations", std::to_string(gr.iterations)},
      {"ground.min_inlier_fraction", d(gr.min_inlier_fraction)},
      {"ground.max_tilt_deg", d(gr.max_tilt_deg)},
      {"ground.seed", std::to_string(gr.seed)},
      {"motion_prior", to_string(cfg.motion_prior)},
      {"pitch_compensation", cfg.pitch_compensation ? "true" : "false"},
  };
}

inline std::string dump_config(const OdometryConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace dlo
