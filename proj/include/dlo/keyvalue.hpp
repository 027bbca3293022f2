#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dlo/error.hpp"

namespace dlo {

/// One `key = value` line of a flat text config or spec file.
struct KeyValue {
  std::string key;
  std::string value;
  std::string source;  // "file:line" for error messages
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace detail

/// Parses `key = value` lines; '#' starts a comment, blank lines are
/// ignored, and repeated keys are kept in file order.
inline std::vector<KeyValue> parse_key_values(std::string_view text, const std::string& name) {
  std::vector<KeyValue> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = name + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw Error(ErrorCode::kParseError, where + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::kParseError, where + ": empty key");
    out.push_back({std::string(key), std::string(detail::trim(line.substr(eq + 1))), where});
  }
  return out;
}

inline std::vector<KeyValue> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

/// Whitespace-separated numbers of a value, all of which must parse.
inline std::vector<double> parse_numbers(const KeyValue& kv) {
  std::vector<double> out;
  const char* it = kv.value.data();
  const char* end = it + kv.value.size();
  while (true) {
    while (it != end && (*it == ' ' || *it == '\t')) ++it;
    if (it == end) break;
    double x;
    auto [next, ec] = std::from_chars(it, end, x);
    if (ec != std::errc{} || (next != end && *next != ' ' && *next != '\t'))
      throw Error(ErrorCode::kParseError, kv.source + ": '" + kv.value + "' is not a list of numbers");
    out.push_back(x);
    it = next;
  }
  return out;
}

inline double parse_double(const KeyValue& kv) {
  const auto v = parse_numbers(kv);
  if (v.size() != 1) throw Error(ErrorCode::kParseError, kv.source + ": " + kv.key + " expects one number");
  return v[0];
}

inline long long parse_integer(const KeyValue& kv) {
  long long x = 0;
  auto [next, ec] = std::from_chars(kv.value.data(), kv.value.data() + kv.value.size(), x);
  if (ec != std::errc{} || next != kv.value.data() + kv.value.size())
    throw Error(ErrorCode::kParseError, kv.source + ": " + kv.key + " expects an integer");
  return x;
}

inline bool parse_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "on" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "off" || kv.value == "0") return false;
  throw Error(ErrorCode::kParseError, kv.source + ": " + kv.key + " expects true/false");
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

}  // namespace dlo
