#include <sys/wait.h>

#include <cstdlib>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace dlo {
namespace {

using testing::slurp;
using testing::spit;
using testing::TempDir;

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun run_cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(DLO_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

void write_dense(const std::filesystem::path& path, const PlanarPose& sensor, std::uint64_t stream) {
  write_kitti_bin(testing::dense_scan(testing::registration_scene(31), sensor, stream), path);
}

void write_flat(const std::filesystem::path& path) {
  write_kitti_bin(sample_surface_scan(SceneSpec{}, {0, 0, 0}, 1.7, 20.0, 0.1, 2, 0.0, 1), path);
}

TEST(Cli, UsageExitCodes) {
  TempDir dir("cli");
  EXPECT_EQ(run_cli(dir, "--help").code, 0);
  EXPECT_EQ(run_cli(dir, "odometry --help").code, 0);
  EXPECT_EQ(run_cli(dir, "").code, 2);
  EXPECT_EQ(run_cli(dir, "odometry --input . --bogus").code, 2);
  EXPECT_EQ(run_cli(dir, "odometry --input " + q(dir / "missing")).code, 2);
  EXPECT_EQ(run_cli(dir, "register --ref a.bin").code, 2);
  EXPECT_EQ(run_cli(dir, "config dump --mode sideways").code, 2);
}

TEST(Cli, MalformedSpecIsUsageError) {
  TempDir dir("cli");
  spit(dir / "bad.scene", "colour = red\n");
  spit(dir / "line.traj", "type = line\nframes = 2\n");
  const CliRun r = run_cli(dir, "synth --scene " + q(dir / "bad.scene") + " --trajectory " + q(dir / "line.traj") +
                                 " --out " + q(dir / "seq"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ParseError"), std::string::npos);
  spit(dir / "bad.cfg", "grid.rows = lots\n");
  EXPECT_EQ(run_cli(dir, "config dump --config " + q(dir / "bad.cfg")).code, 2);
}

TEST(Cli, RuntimeFailuresExitOne) {
  TempDir dir("cli");
  spit(dir / "a.txt", "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1 0\n");
  spit(dir / "b.txt", "1 0 0 0 0 1 0 0 0 0 1 0\n");
  const CliRun mismatch = run_cli(dir, "eval --est " + q(dir / "a.txt") + " --ref " + q(dir / "b.txt") + " --out " +
                                        q(dir / "r.json"));
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_NE(mismatch.err.find("LengthMismatch"), std::string::npos);

  write_flat(dir / "flat.bin");
  spit(dir / "file", "x");
  EXPECT_EQ(run_cli(dir, "render --scan " + q(dir / "flat.bin") + " --out " + q(dir / "file" / "g.png")).code, 1);
  EXPECT_EQ(run_cli(dir, "render --scan " + q(dir / "nope.bin") + " --out " + q(dir / "g.png")).code, 1);
}

TEST(Cli, SynthIsDeterministic) {
  TempDir dir("cli");
  spit(dir / "s.scene",
       "seed = 5\nroughness = 0.05\nbox = 6 1 0.3 2 3 2\ncylinder = -4 2 0.4 3\n"
       "sensor.beams = 16\nsensor.horizontal_resolution = 0.5\n");
  spit(dir / "t.traj", "type = line\nframes = 3\nstep = 0.5\n");
  const std::string common = "synth --scene " + q(dir / "s.scene") + " --trajectory " + q(dir / "t.traj");
  ASSERT_EQ(run_cli(dir, common + " --out " + q(dir / "a") + " --threads 1").code, 0);
  ASSERT_EQ(run_cli(dir, common + " --out " + q(dir / "b") + " --threads 3").code, 0);
  for (const char* f : {"000000.bin", "000001.bin", "000002.bin", "gt.txt", "scene.txt"}) {
    const std::string a = slurp(dir / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(dir / "b" / f)) << f;
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "a" / "000003.bin"));
  const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  EXPECT_EQ(m["command"], "synth");
  const Trajectory gt = read_trajectory(dir / "a" / "gt.txt", TrajectoryFormat::kKitti);
  ASSERT_EQ(gt.size(), 3u);
  EXPECT_EQ(gt.pose(2).t, Eigen::Vector3d(1.0, 0, 0));
}

TEST(Cli, OdometryOnIdenticalFrames) {
  TempDir dir("cli");
  std::filesystem::create_directories(dir / "scans");
  for (const char* f : {"000000.bin", "000001.bin", "000002.bin"}) write_dense(dir / "scans" / f, {0, 0, 0}, 1);
  const CliRun r = run_cli(dir, "odometry --input " + q(dir / "scans") + " --out " + q(dir / "out" / "traj.txt") +
                                 " --no-pitch-compensation --quiet");
  ASSERT_EQ(r.code, 0) << r.err;
  const Trajectory t = read_trajectory(dir / "out" / "traj.txt", TrajectoryFormat::kKitti);
  ASSERT_EQ(t.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k)
    EXPECT_LE((t.pose(k).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-6);
  const auto diags = read_diagnostics_csv(dir / "out" / "traj.diagnostics.csv");
  ASSERT_EQ(diags.size(), 3u);
  for (const auto& d : diags) EXPECT_FALSE(d.fallback);
  const auto m = nlohmann::json::parse(slurp(dir / "out" / "traj.manifest.json"));
  EXPECT_EQ(m["command"], "odometry");
  EXPECT_EQ(m["config"]["pitch_compensation"], "false");
}

TEST(Cli, ManifestConfigReproducesTheRun) {
  TempDir dir("cli");
  std::filesystem::create_directories(dir / "scans");
  write_dense(dir / "scans" / "000000.bin", {0, 0, 0}, 1);
  write_dense(dir / "scans" / "000001.bin", {0.3, 0.1, 0.04}, 2);
  write_dense(dir / "scans" / "000002.bin", {0.6, 0.25, 0.08}, 3);
  ASSERT_EQ(run_cli(dir, "odometry --input " + q(dir / "scans") + " --out " + q(dir / "a.txt") +
                             " --threads 1 --resolution 0.1 --mode planar --quiet")
                .code,
            0);
  const auto m = nlohmann::json::parse(slurp(dir / "a.manifest.json"));
  std::string cfg;
  for (const auto& [k, v] : m["config"].items()) cfg += k + " = " + v.get<std::string>() + "\n";
  spit(dir / "replay.cfg", cfg);
  ASSERT_EQ(
      run_cli(dir, "odometry --input " + q(dir / "scans") + " --out " + q(dir / "b.txt") + " --config " +
                       q(dir / "replay.cfg") + " --quiet")
          .code,
      0);
  EXPECT_EQ(slurp(dir / "a.txt"), slurp(dir / "b.txt"));
  EXPECT_FALSE(slurp(dir / "a.txt").empty());
}

TEST(Cli, RegisterPrintsTheWarp) {
  TempDir dir("cli");
  write_dense(dir / "a.bin", {0, 0, 0}, 1);
  write_dense(dir / "b.bin", {0.4, -0.2, 4.0 * M_PI / 180.0}, 2);
  const CliRun same = run_cli(dir, "register --ref " + q(dir / "a.bin") + " --mov " + q(dir / "a.bin") +
                                    " --no-pitch-compensation");
  ASSERT_EQ(same.code, 0) << same.err;
  const auto js = nlohmann::json::parse(same.out);
  EXPECT_TRUE(js["converged"].get<bool>());
  EXPECT_EQ(js["status"], "Converged");
  EXPECT_LE(std::abs(js["relative_pose"]["x"].get<double>()), 1e-6);
  EXPECT_LE(std::abs(js["relative_pose"]["yaw_deg"].get<double>()), 1e-6);
  EXPECT_GT(js["timings_s"]["grid_build_and_solve"].get<double>(), 0.0);

  const CliRun moved = run_cli(dir, "register --ref " + q(dir / "a.bin") + " --mov " + q(dir / "b.bin") +
                                     " --no-pitch-compensation --manifest " + q(dir / "reg.json"));
  ASSERT_EQ(moved.code, 0) << moved.err;
  const auto jm = nlohmann::json::parse(moved.out);
  Pose warp;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) warp.R(r, c) = jm["relative_pose"]["matrix"][r][c].get<double>();
    warp.t(r) = jm["relative_pose"]["matrix"][r][3].get<double>();
  }
  // The warp maps the moving grid onto the reference, so its inverse is the sensor motion.
  const Pose motion = planar_embed({0.4, -0.2, 4.0 * M_PI / 180.0});
  EXPECT_LE(testing::planar_translation_error(warp.inverse(), motion), 0.02);
  EXPECT_LE(testing::yaw_error_deg(warp.inverse(), motion), 0.2);
  EXPECT_TRUE(std::filesystem::exists(dir / "reg.json"));
}

TEST(Cli, RegisterFlatScanFails) {
  TempDir dir("cli");
  write_flat(dir / "flat.bin");
  const CliRun r = run_cli(dir, "register --ref " + q(dir / "flat.bin") + " --mov " + q(dir / "flat.bin"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("InsufficientResiduals"), std::string::npos);
}

TEST(Cli, EvalIdenticalTrajectories) {
  TempDir dir("cli");
  Trajectory t;
  for (int k = 0; k < 70; ++k) t.push_back(k, planar_embed({k * 1.0, 0.1 * k, 0.01 * k}));
  write_trajectory(t, dir / "t.txt", TrajectoryFormat::kKitti);
  const CliRun r = run_cli(dir, "eval --est " + q(dir / "t.txt") + " --ref " + q(dir / "t.txt") + " --out " +
                                 q(dir / "rep" / "r.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir / "rep" / "r.json"));
  EXPECT_EQ(j["ape_max_m"].get<double>(), 0.0);
  EXPECT_EQ(j["tep_final_percent"].get<double>(), 0.0);
  EXPECT_TRUE(std::filesystem::exists(dir / "rep" / "r.curves.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "rep" / "r.manifest.json"));
  EXPECT_NE(r.out.find("APE max"), std::string::npos);
}

std::set<std::pair<int, int>> green_pixels(const Image& img) {
  std::set<std::pair<int, int>> out;
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u) {
      const auto* px = img.at(u, v);
      if (px[0] == 0 && px[1] == 255 && px[2] == 0) out.insert({u, v});
    }
  return out;
}

TEST(Cli, RenderOverlaysTheSelection) {
  TempDir dir("cli");
  write_flat(dir / "flat.bin");
  ASSERT_EQ(run_cli(dir, "render --scan " + q(dir / "flat.bin") + " --out " + q(dir / "flat.png") +
                             " --show-selection --no-pitch-compensation")
                .code,
            0);
  EXPECT_TRUE(green_pixels(read_png(dir / "flat.png")).empty());

  SceneSpec scene;
  scene.boxes.push_back({1.05, -2.05, 0.0, 3.0, 2.0, 1.0});
  write_kitti_bin(sample_surface_scan(scene, {0, 0, 0}, 1.7, 20.0, 0.1, 2, 0.0, 1), dir / "box.bin");
  const CliRun r = run_cli(dir, "render --scan " + q(dir / "box.bin") + " --out " + q(dir / "box.png") +
                                 " --show-selection --no-pitch-compensation");
  ASSERT_EQ(r.code, 0) << r.err;
  const HeightGrid g = build_height_grid(read_scan_file(dir / "box.bin", ScanFormat::kKittiBin), GridConfig{});
  std::set<std::pair<int, int>> expected;
  for (const auto& s : select_semi_dense_cells(g, 0.05)) expected.insert({s.cell.u, s.cell.v});
  EXPECT_FALSE(expected.empty());
  EXPECT_EQ(green_pixels(read_png(dir / "box.png")), expected);
}

TEST(Cli, ConfigDumpRecenters) {
  TempDir dir("cli");
  const CliRun r = run_cli(dir, "config dump --grid-size 200 --threads 2");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("grid.c_x = 100\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("grid.rows = 200\n"), std::string::npos);
  EXPECT_NE(r.out.find("solver.threads = 2\n"), std::string::npos);
  spit(dir / "c.cfg", r.out);
  OdometryConfig cfg = load_config(dir / "c.cfg");
  EXPECT_EQ(cfg.grid.c_y, 100.0);
}

}  // namespace
}  // namespace dlo
