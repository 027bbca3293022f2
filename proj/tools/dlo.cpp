// dlo: height-grid LiDAR odometry command-line tool.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dlo/dlo.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Options shared by every command that builds grids or registers them.
struct CommonOptions {
  std::string config_path;
  std::optional<std::string> mode;
  std::optional<int> grid_size;
  std::optional<double> resolution;
  std::optional<double> threshold;
  std::optional<double> max_height;
  std::optional<std::string> prior;
  bool no_pitch_compensation = false;
  std::optional<int> threads;

  void add_to(CLI::App& app, bool odometry_options) {
    app.add_option("--config", config_path, "key = value configuration file (see `dlo config dump`)")
        ->check(CLI::ExistingFile);
    app.add_option("--mode", mode, "degrees of freedom: planar | full")
        ->check(CLI::IsMember({"planar", "full"}))
        ->default_str("planar");
    app.add_option("--grid-size", grid_size, "grid rows and columns (cells)")->default_str("400");
    app.add_option("--resolution", resolution, "cell size in meters")->default_str("0.1");
    app.add_option("--threshold", threshold, "semi-dense gradient threshold (m per cell)")->default_str("0.05");
    app.add_option("--max-height", max_height, "discard points above this height (m)")->default_str("3");
    app.add_option("--threads", threads, "worker threads")->default_str("available parallelism");
    if (odometry_options) {
      app.add_option("--prior", prior, "motion prior: identity | constant-velocity")
          ->check(CLI::IsMember({"identity", "constant-velocity"}))
          ->default_str("constant-velocity");
    }
    app.add_flag("--no-pitch-compensation", no_pitch_compensation, "skip ground-plane leveling");
  }

  // Defaults, then the config file, then command-line flags.
  dlo::OdometryConfig resolve() const {
    dlo::OdometryConfig cfg;
    std::vector<dlo::KeyValue> kvs;
    if (!config_path.empty()) kvs = dlo::read_key_value_file(config_path);
    const bool file_sets_threads =
        std::any_of(kvs.begin(), kvs.end(), [](const dlo::KeyValue& kv) { return kv.key == "solver.threads"; });
    auto flag = [&](const std::string& key, const std::string& value) { kvs.push_back({key, value, "--" + key}); };
    if (mode) flag("solver.mode", *mode);
    if (grid_size) {
      flag("grid.rows", std::to_string(*grid_size));
      flag("grid.cols", std::to_string(*grid_size));
    }
    if (resolution) flag("grid.resolution", dlo::format_double(*resolution));
    if (threshold) flag("solver.gradient_threshold", dlo::format_double(*threshold));
    if (max_height) flag("grid.max_height", dlo::format_double(*max_height));
    if (prior) flag("motion_prior", *prior);
    if (no_pitch_compensation) flag("pitch_compensation", "false");
    if (threads) flag("solver.threads", std::to_string(*threads));
    else if (!file_sets_threads)
      flag("solver.threads", std::to_string(std::max(1u, std::thread::hardware_concurrency())));
    dlo::apply_config(cfg, kvs);
    return cfg;
  }
};

dlo::RunManifest start_manifest(const std::string& command, int argc, char** argv) {
  dlo::RunManifest m;
  m.command = command;
  m.arguments.assign(argv, argv + argc);
  m.started_utc = dlo::utc_timestamp();
  return m;
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p.replace_extension();
  return p.string() + suffix;
}

std::vector<fs::path> list_scans(const fs::path& dir, dlo::ScanFormat format) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    const auto name = entry.path().filename().string();
    if (format == dlo::ScanFormat::kKittiBin ? ext == ".bin"
                                             : ((ext == ".xyz" || ext == ".txt") && name != "times.txt"))
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// KITTI keeps times.txt beside the velodyne/ directory.
std::vector<double> read_timestamps(const fs::path& dir, std::size_t expected) {
  for (const auto& candidate : {dir / "times.txt", dir.parent_path() / "times.txt"}) {
    std::ifstream in(candidate);
    if (!in) continue;
    std::vector<double> stamps;
    double t;
    while (in >> t) stamps.push_back(t);
    if (stamps.size() == expected) return stamps;
  }
  return {};
}

json pose_json(const dlo::Pose& p) {
  const auto planar = dlo::planar_project(p);
  json j;
  j["matrix"] = json::array();
  for (int r = 0; r < 3; ++r) j["matrix"].push_back({p.R(r, 0), p.R(r, 1), p.R(r, 2), p.t(r)});
  j["x"] = planar.x;
  j["y"] = planar.y;
  j["z"] = p.t.z();
  j["yaw_deg"] = planar.yaw * 180.0 / M_PI;
  return j;
}

dlo::Scan load_leveled(const fs::path& path, dlo::ScanFormat format, const dlo::OdometryConfig& cfg) {
  dlo::Scan scan = dlo::read_scan_file(path, format);
  if (cfg.pitch_compensation) scan = dlo::pitch_compensate(scan, cfg.ground).scan;
  return scan;
}

// ---------------------------------------------------------------- odometry

struct OdometryArgs {
  CommonOptions common;
  std::string input;
  std::string format = "kitti-bin";
  std::string out = "trajectory.txt";
  std::string traj_format = "kitti";
  std::string diagnostics;
  bool quiet = false;
};

int run_odometry_cmd(const OdometryArgs& a, int argc, char** argv) {
  const auto t0 = Clock::now();
  auto manifest = start_manifest("odometry", argc, argv);
  const auto cfg = a.common.resolve();
  manifest.set_config(cfg);
  const auto format = dlo::parse_scan_format(a.format);
  const auto traj_format = dlo::parse_trajectory_format(a.traj_format);
  const auto files = list_scans(a.input, format);
  if (files.size() < 2) throw dlo::Error(dlo::ErrorCode::kDegenerateInput, "odometry needs at least two scans in " + a.input);
  const auto stamps = read_timestamps(a.input, files.size());

  dlo::Odometry odom(cfg);
  for (std::size_t k = 0; k < files.size(); ++k) {
    dlo::Scan scan;
    try {
      scan = dlo::read_scan_file(files[k], format);
    } catch (const dlo::Error& e) {
      throw dlo::Error(e.code(), "frame " + std::to_string(k) + " (" + files[k].string() + "): " + e.what());
    }
    scan.frame_index = k;
    if (!stamps.empty()) scan.timestamp = stamps[k];
    const auto& d = odom.process(scan);
    if (!a.quiet && d.fallback)
      std::cerr << "frame " << k << ": registration failed (" << d.error << "), using the motion prior\n";
  }

  const fs::path out = a.out;
  const fs::path diag_path = a.diagnostics.empty() ? sibling(out, ".diagnostics.csv") : fs::path(a.diagnostics);
  const fs::path manifest_path = sibling(out, ".manifest.json");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  dlo::write_trajectory(odom.trajectory(), out, traj_format);
  dlo::write_diagnostics_csv(odom.diagnostics(), diag_path);

  const auto stats = dlo::runtime_stats(odom.diagnostics());
  manifest.inputs = {{"scans", a.input}, {"format", a.format}};
  manifest.outputs = {{"trajectory", out.string()}, {"diagnostics", diag_path.string()}, {"manifest", manifest_path.string()}};
  manifest.timings_s = {{"total", seconds_since(t0)}, {"frame_mean", stats.mean_s}, {"frame_max", stats.max_s}};
  dlo::write_manifest(manifest, manifest_path);
  if (!a.quiet)
    std::printf("frames %zu, fallbacks %zu, time/frame %.4f s, trajectory %s\n", stats.frames, stats.fallbacks,
                stats.mean_s, out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------- register

struct RegisterArgs {
  CommonOptions common;
  std::string ref;
  std::string mov;
  std::string format = "kitti-bin";
  std::string init = "0 0 0";
  std::string manifest;
};

int run_register_cmd(const RegisterArgs& a, int argc, char** argv) {
  const auto t0 = Clock::now();
  auto manifest = start_manifest("register", argc, argv);
  const auto cfg = a.common.resolve();
  manifest.set_config(cfg);
  const auto format = dlo::parse_scan_format(a.format);
  const auto init_values = dlo::parse_numbers({"--init", a.init, "--init"});
  if (init_values.size() != 3)
    throw dlo::Error(dlo::ErrorCode::kParseError, "--init expects \"x y yaw_deg\"");
  const dlo::Pose init = dlo::planar_embed({init_values[0], init_values[1], init_values[2] * M_PI / 180.0});

  const auto t_load = Clock::now();
  const auto scan1 = load_leveled(a.ref, format, cfg);
  const auto scan2 = load_leveled(a.mov, format, cfg);
  const double load_s = seconds_since(t_load);

  const auto t_grid = Clock::now();
  const auto g1 = dlo::build_height_grid(scan1, cfg.grid);
  const auto g2 = dlo::build_height_grid(scan2, cfg.grid);
  const double grid_s = seconds_since(t_grid);

  const auto t_solve = Clock::now();
  const auto r = dlo::register_grids(g1, g2, init, cfg.solver);
  const double solve_s = seconds_since(t_solve);

  manifest.inputs = {{"ref", a.ref}, {"mov", a.mov}, {"format", a.format}};
  manifest.timings_s = {{"load_and_level", load_s}, {"grid_build", grid_s}, {"solve", solve_s},
                        {"total", seconds_since(t0)}};
  if (!a.manifest.empty()) {
    manifest.outputs = {{"manifest", a.manifest}};
    dlo::write_manifest(manifest, a.manifest);
  }

  json j;
  j["relative_pose"] = pose_json(r.relative_pose);
  j["final_cost"] = r.final_cost;
  j["mean_cost"] = r.mean_cost;
  j["iterations"] = r.iterations;
  j["level_iterations"] = r.level_iterations;
  j["residual_count"] = r.residual_count;
  j["inlier_count"] = r.inlier_count;
  j["converged"] = r.converged;
  j["status"] = r.converged ? "Converged" : "NotConverged";
  j["condition_estimate"] = r.condition_estimate;
  j["points"] = {scan1.points.size(), scan2.points.size()};
  j["timings_s"] = {{"grid_build", grid_s}, {"solve", solve_s}, {"grid_build_and_solve", grid_s + solve_s}};
  j["manifest"] = dlo::to_json(manifest);
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string est;
  std::string ref;
  std::string out = "report.json";
  std::string format = "kitti";
  std::string curves;
  std::string diagnostics;
  double min_length = 50.0;
};

int run_eval_cmd(const EvalArgs& a, int argc, char** argv) {
  const auto t0 = Clock::now();
  auto manifest = start_manifest("eval", argc, argv);
  const auto format = dlo::parse_trajectory_format(a.format);
  const dlo::AlignedPair pair(dlo::read_trajectory(a.est, format), dlo::read_trajectory(a.ref, format));
  std::vector<dlo::FrameDiagnostics> diags;
  if (!a.diagnostics.empty()) diags = dlo::read_diagnostics_csv(a.diagnostics);
  const auto report = dlo::summarize(pair, diags, a.min_length);

  const fs::path out = a.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path curves = a.curves.empty() ? sibling(out, ".curves.csv") : fs::path(a.curves);
  const fs::path manifest_path = sibling(out, ".manifest.json");
  {
    std::ofstream f(out);
    if (!f) throw dlo::Error(dlo::ErrorCode::kIoError, "cannot write " + out.string());
    f << dlo::to_json(report).dump(2) << "\n";
  }
  dlo::write_error_curves_csv(pair, curves, a.min_length);
  manifest.inputs = {{"estimate", a.est}, {"reference", a.ref}};
  if (!a.diagnostics.empty()) manifest.inputs.emplace_back("diagnostics", a.diagnostics);
  manifest.outputs = {{"report", out.string()}, {"curves", curves.string()}, {"manifest", manifest_path.string()}};
  manifest.timings_s = {{"total", seconds_since(t0)}};
  dlo::write_manifest(manifest, manifest_path);
  std::cout << dlo::to_text(report);
  return 0;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
  CommonOptions common;
  std::string scan;
  std::string out = "grid.png";
  std::string format = "kitti-bin";
  bool show_selection = false;
};

int run_render_cmd(const RenderArgs& a, int argc, char** argv) {
  const auto t0 = Clock::now();
  auto manifest = start_manifest("render", argc, argv);
  const auto cfg = a.common.resolve();
  manifest.set_config(cfg);
  const auto scan = load_leveled(a.scan, dlo::parse_scan_format(a.format), cfg);
  const auto grid = dlo::build_height_grid(scan, cfg.grid);
  std::optional<dlo::SelectedCells> selection;
  if (a.show_selection) selection = dlo::select_semi_dense_cells(grid, cfg.solver.gradient_threshold);
  const fs::path out = a.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  dlo::render_grid_image(grid, selection ? &*selection : nullptr, out);
  const fs::path manifest_path = out.string() + ".manifest.json";
  manifest.inputs = {{"scan", a.scan}, {"format", a.format}};
  manifest.outputs = {{"image", out.string()}, {"manifest", manifest_path.string()}};
  manifest.timings_s = {{"total", seconds_since(t0)}};
  dlo::write_manifest(manifest, manifest_path);
  std::cout << "valid cells " << grid.valid_cell_count();
  if (selection) std::cout << ", selected " << selection->size();
  std::cout << ", image " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string scene;
  std::string trajectory;
  std::string out;
  std::optional<int> threads;
};

int run_synth_cmd(const SynthArgs& a, int argc, char** argv) {
  const auto t0 = Clock::now();
  auto manifest = start_manifest("synth", argc, argv);
  const auto scene = dlo::parse_scene_file(dlo::read_key_value_file(a.scene));
  const auto poses = dlo::parse_trajectory_spec(dlo::read_key_value_file(a.trajectory));
  const int threads = a.threads ? *a.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const auto seq = dlo::render_sequence(scene.scene, scene.sensor, poses, threads);

  const fs::path dir = a.out;
  fs::create_directories(dir);
  for (std::size_t k = 0; k < seq.scans.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.bin", k);
    dlo::write_kitti_bin(seq.scans[k], dir / name);
  }
  dlo::write_trajectory(seq.ground_truth, dir / "gt.txt", dlo::TrajectoryFormat::kKitti);
  dlo::write_scene_file(scene, dir / "scene.txt");
  manifest.inputs = {{"scene", a.scene}, {"trajectory", a.trajectory}};
  manifest.outputs = {{"scans", dir.string()}, {"ground_truth", (dir / "gt.txt").string()},
                      {"scene", (dir / "scene.txt").string()}, {"manifest", (dir / "manifest.json").string()}};
  manifest.timings_s = {{"total", seconds_since(t0)}};
  dlo::write_manifest(manifest, dir / "manifest.json");
  std::cout << "wrote " << seq.scans.size() << " scans to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direct LiDAR odometry on 2.5D height grids"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dlo::kVersion);

  OdometryArgs odo;
  auto* odo_cmd = app.add_subcommand("odometry", "estimate a trajectory from a directory of scans");
  odo_cmd->add_option("--input", odo.input, "directory of scan files, processed in name order")
      ->required()
      ->check(CLI::ExistingDirectory);
  odo_cmd->add_option("--format", odo.format, "scan format: kitti-bin | xyz-text")
      ->check(CLI::IsMember({"kitti-bin", "xyz-text"}))
      ->capture_default_str();
  odo_cmd->add_option("--out", odo.out, "trajectory output path")->capture_default_str();
  odo_cmd->add_option("--traj-format", odo.traj_format, "trajectory format: kitti | tum")
      ->check(CLI::IsMember({"kitti", "tum"}))
      ->capture_default_str();
  odo_cmd->add_option("--diagnostics", odo.diagnostics, "per-frame CSV (default: <out>.diagnostics.csv)");
  odo_cmd->add_flag("--quiet", odo.quiet, "no progress output");
  odo.common.add_to(*odo_cmd, true);

  RegisterArgs reg;
  auto* reg_cmd = app.add_subcommand("register", "register one scan pair and print the result as JSON");
  reg_cmd->add_option("--ref", reg.ref, "reference scan")->required();
  reg_cmd->add_option("--mov", reg.mov, "moving scan")->required();
  reg_cmd->add_option("--format", reg.format, "scan format: kitti-bin | xyz-text")
      ->check(CLI::IsMember({"kitti-bin", "xyz-text"}))
      ->capture_default_str();
  reg_cmd->add_option("--init", reg.init, "initial guess \"x y yaw_deg\"")->capture_default_str();
  reg_cmd->add_option("--manifest", reg.manifest, "also write the run manifest to this path");
  reg.common.add_to(*reg_cmd, false);

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "compare an estimated trajectory with ground truth");
  ev_cmd->add_option("--est", ev.est, "estimated trajectory")->required();
  ev_cmd->add_option("--ref", ev.ref, "reference trajectory")->required();
  ev_cmd->add_option("--out", ev.out, "JSON report path")->capture_default_str();
  ev_cmd->add_option("--format", ev.format, "trajectory format: kitti | tum")
      ->check(CLI::IsMember({"kitti", "tum"}))
      ->capture_default_str();
  ev_cmd->add_option("--curves", ev.curves, "per-frame CSV (default: <out>.curves.csv)");
  ev_cmd->add_option("--diagnostics", ev.diagnostics, "odometry diagnostics CSV for runtime statistics");
  ev_cmd->add_option("--min-length", ev.min_length, "path length before error percentages start (m)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  RenderArgs ren;
  auto* ren_cmd = app.add_subcommand("render", "write the height grid of a scan as a PNG");
  ren_cmd->add_option("--scan", ren.scan, "scan file")->required();
  ren_cmd->add_option("--out", ren.out, "PNG output path")->capture_default_str();
  ren_cmd->add_option("--format", ren.format, "scan format: kitti-bin | xyz-text")
      ->check(CLI::IsMember({"kitti-bin", "xyz-text"}))
      ->capture_default_str();
  ren_cmd->add_flag("--show-selection", ren.show_selection, "overlay semi-dense cells in green");
  ren.common.add_to(*ren_cmd, false);

  SynthArgs syn;
  auto* syn_cmd = app.add_subcommand("synth", "render a synthetic scan sequence with ground truth");
  syn_cmd->add_option("--scene", syn.scene, "scene spec file")->required()->check(CLI::ExistingFile);
  syn_cmd->add_option("--trajectory", syn.trajectory, "trajectory spec file")->required()->check(CLI::ExistingFile);
  syn_cmd->add_option("--out", syn.out, "output directory")->required();
  syn_cmd->add_option("--threads", syn.threads, "worker threads")->default_str("available parallelism");

  CommonOptions dump_opts;
  auto* cfg_cmd = app.add_subcommand("config", "configuration utilities");
  cfg_cmd->require_subcommand(1);
  auto* dump_cmd = cfg_cmd->add_subcommand("dump", "print every configuration key with its resolved value");
  dump_opts.add_to(*dump_cmd, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*odo_cmd) return run_odometry_cmd(odo, argc, argv);
    if (*reg_cmd) return run_register_cmd(reg, argc, argv);
    if (*ev_cmd) return run_eval_cmd(ev, argc, argv);
    if (*ren_cmd) return run_render_cmd(ren, argc, argv);
    if (*syn_cmd) return run_synth_cmd(syn, argc, argv);
    if (*dump_cmd) {
      std::cout << dlo::dump_config(dump_opts.resolve());
      return 0;
    }
  } catch (const dlo::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == dlo::ErrorCode::kParseError ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
