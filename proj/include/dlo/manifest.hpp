#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dlo/config.hpp"
#include "dlo/error.hpp"

namespace dlo {

inline constexpr const char* kVersion = "0.1.0";

/// Record written next to every CLI run's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::pair<std::string, std::string>> inputs;   // role, path
  std::vector<std::pair<std::string, std::string>> outputs;  // role, path
  std::vector<std::pair<std::string, double>> timings_s;
  std::string started_utc;

  void set_config(const OdometryConfig& cfg) {
    config = nlohmann::json::object();
    for (const auto& [k, v] : config_entries(cfg)) config[k] = v;
  }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json j;
  j["tool"] = "dlo";
  j["version"] = kVersion;
  j["command"] = m.command;
  j["arguments"] = m.arguments;
  j["started_utc"] = m.started_utc;
  j["config"] = m.config;
  j["inputs"] = nlohmann::json::object();
  for (const auto& [k, v] : m.inputs) j["inputs"][k] = v;
  j["outputs"] = nlohmann::json::object();
  for (const auto& [k, v] : m.outputs) j["outputs"][k] = v;
  j["timings_s"] = nlohmann::json::object();
  for (const auto& [k, v] : m.timings_s) j["timings_s"][k] = v;
  return j;
}

inline void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << to_json(m).dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

}  // namespace dlo
