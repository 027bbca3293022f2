#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"

#include "dlo/error.hpp"
#include "dlo/keyvalue.hpp"
#include "dlo/odometry.hpp"
#include "dlo/trajectory.hpp"

namespace dlo {

/// Estimated and reference trajectories associated frame by frame.
class AlignedPair {
 public:
  AlignedPair(Trajectory estimated, Trajectory reference)
      : estimated_(std::move(estimated)), reference_(std::move(reference)) {
    if (estimated_.size() != reference_.size())
      throw Error(ErrorCode::kLengthMismatch, "estimated trajectory has " + std::to_string(estimated_.size()) +
                                                  " poses, reference has " + std::to_string(reference_.size()));
  }

  const Trajectory& estimated() const { return estimated_; }
  const Trajectory& reference() const { return reference_; }
  std::size_t size() const { return estimated_.size(); }

 private:
  Trajectory estimated_;
  Trajectory reference_;
};

/// Per-frame Euclidean distance between estimated and reference positions.
inline std::vector<double> absolute_position_error(const AlignedPair& pair) {
  std::vector<double> out(pair.size());
  for (std::size_t k = 0; k < pair.size(); ++k)
    out[k] = (pair.estimated().pose(k).t - pair.reference().pose(k).t).norm();
  return out;
}

/// Cumulative reference path length at each frame.
inline std::vector<double> path_length(const Trajectory& traj) {
  std::vector<double> out(traj.size(), 0.0);
  for (std::size_t k = 1; k < traj.size(); ++k) out[k] = out[k - 1] + (traj.pose(k).t - traj.pose(k - 1).t).norm();
  return out;
}

struct ErrorPercentage {
  std::size_t frame = 0;  // position in the pair
  double path_length = 0.0;
  double percent = 0.0;
};

/// 100 * APE / traveled reference length, for frames whose traveled length
/// has reached `min_length`.
inline std::vector<ErrorPercentage> translation_error_percentage(const AlignedPair& pair, double min_length = 50.0) {
  if (!(min_length > 0.0)) throw Error(ErrorCode::kDegenerateInput, "min_length must be positive");
  const auto ape = absolute_position_error(pair);
  const auto length = path_length(pair.reference());
  std::vector<ErrorPercentage> out;
  for (std::size_t k = 0; k < pair.size(); ++k)
    if (length[k] >= min_length) out.push_back({k, length[k], 100.0 * ape[k] / length[k]});
  return out;
}

struct RuntimeStats {
  std::size_t frames = 0;
  double mean_s = 0.0;
  double median_s = 0.0;
  double max_s = 0.0;
  std::size_t fallbacks = 0;
};

inline RuntimeStats runtime_stats(std::span<const FrameDiagnostics> diags) {
  RuntimeStats s;
  std::vector<double> t;
  for (const auto& d : diags) {
    t.push_back(d.runtime_s);
    if (d.fallback) ++s.fallbacks;
  }
  s.frames = t.size();
  if (t.empty()) return s;
  double sum = 0.0;
  for (double x : t) sum += x;
  s.mean_s = sum / static_cast<double>(t.size());
  s.max_s = *std::max_element(t.begin(), t.end());
  std::sort(t.begin(), t.end());
  const std::size_t n = t.size();
  s.median_s = n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
  return s;
}

struct EvalReport {
  std::size_t frames = 0;
  double ape_max = 0.0;
  double ape_mean = 0.0;
  double ape_final = 0.0;
  double path_length = 0.0;
  double endpoint_gap = 0.0;          // |t_last - t_first| of the estimate
  double reference_endpoint_gap = 0.0;
  std::optional<double> tep_final;    // percent, once min_length is reached
  std::optional<double> tep_mean;
  std::optional<RuntimeStats> runtime;
};

inline EvalReport summarize(const AlignedPair& pair, std::span<const FrameDiagnostics> diags = {},
                            double min_length = 50.0) {
  EvalReport r;
  r.frames = pair.size();
  if (pair.size() == 0) return r;
  const auto ape = absolute_position_error(pair);
  double sum = 0.0;
  for (double e : ape) {
    sum += e;
    r.ape_max = std::max(r.ape_max, e);
  }
  r.ape_mean = sum / static_cast<double>(ape.size());
  r.ape_final = ape.back();
  r.path_length = path_length(pair.reference()).back();
  const auto& est = pair.estimated();
  const auto& ref = pair.reference();
  r.endpoint_gap = (est.pose(est.size() - 1).t - est.pose(0).t).norm();
  r.reference_endpoint_gap = (ref.pose(ref.size() - 1).t - ref.pose(0).t).norm();
  const auto tep = translation_error_percentage(pair, min_length);
  if (!tep.empty()) {
    double s = 0.0;
    for (const auto& e : tep) s += e.percent;
    r.tep_mean = s / static_cast<double>(tep.size());
    r.tep_final = tep.back().percent;
  }
  if (!diags.empty()) r.runtime = runtime_stats(diags);
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {{"frames", r.frames},
                      {"ape_max_m", r.ape_max},
                      {"ape_mean_m", r.ape_mean},
                      {"ape_final_m", r.ape_final},
                      {"path_length_m", r.path_length},
                      {"endpoint_gap_m", r.endpoint_gap},
                      {"reference_endpoint_gap_m", r.reference_endpoint_gap}};
  j["tep_final_percent"] = r.tep_final ? nlohmann::json(*r.tep_final) : nlohmann::json(nullptr);
  j["tep_mean_percent"] = r.tep_mean ? nlohmann::json(*r.tep_mean) : nlohmann::json(nullptr);
  if (r.runtime) {
    j["runtime"] = {{"frames", r.runtime->frames},
                    {"mean_s", r.runtime->mean_s},
                    {"median_s", r.runtime->median_s},
                    {"max_s", r.runtime->max_s},
                    {"fallbacks", r.runtime->fallbacks}};
  }
  return j;
}

inline std::string to_text(const EvalReport& r) {
  std::string out;
  auto line = [&](const char* label, double value, const char* unit) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-18s%.4f %s\n", label, value, unit);
    out += buf;
  };
  out += "frames            " + std::to_string(r.frames) + "\n";
  line("APE max", r.ape_max, "m");
  line("APE mean", r.ape_mean, "m");
  line("APE final", r.ape_final, "m");
  line("path length", r.path_length, "m");
  line("endpoint gap", r.endpoint_gap, "m");
  if (r.tep_final) {
    line("TEP final", *r.tep_final, "%");
    line("TEP mean", *r.tep_mean, "%");
  }
  if (r.runtime) {
    line("time/frame mean", r.runtime->mean_s, "s");
    line("time/frame max", r.runtime->max_s, "s");
    out += "fallback frames   " + std::to_string(r.runtime->fallbacks) + "\n";
  }
  return out;
}

/// frame, path_length_m, ape_m, tep_percent (empty before min_length).
inline void write_error_curves_csv(const AlignedPair& pair, const std::filesystem::path& path,
                                   double min_length = 50.0) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  const auto ape = absolute_position_error(pair);
  const auto length = path_length(pair.reference());
  out << "frame,path_length_m,ape_m,tep_percent\n";
  for (std::size_t k = 0; k < pair.size(); ++k) {
    out << pair.estimated().entries[k].frame_index << ',' << format_double(length[k]) << ','
        << format_double(ape[k]) << ',';
    if (length[k] >= min_length) out << format_double(100.0 * ape[k] / length[k]);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

}  // namespace dlo
