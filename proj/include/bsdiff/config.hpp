#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bsdiff/errors.hpp"
#include "bsdiff/io.hpp"

namespace bsdiff {

/// Flat `key = value` text. '#' starts a comment; keys may appear once.
/// Typed getters mark keys as used, and reject_unused() turns anything left
/// over into an error, so typos never pass silently.
class FlatConfig {
 public:
  FlatConfig() = default;

  static FlatConfig parse(std::istream& is, const std::string& source = "config") {
    FlatConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      const std::string where = source + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw InvalidArgument(where + ": expected key = value");
      const std::string key = trim(body.substr(0, eq));
      const std::string value = trim(body.substr(eq + 1));
      if (key.empty()) throw InvalidArgument(where + ": empty key");
      if (!cfg.values_.emplace(key, value).second) throw InvalidArgument(where + ": duplicate key '" + key + "'");
    }
    return cfg;
  }

  static FlatConfig parse_string(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  static FlatConfig load(const std::string& path) {
    auto is = io::open_input(path);
    return parse(is, path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : to_double(key, it->second);
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::int64_t v = 0;
    const std::string& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw InvalidArgument("key '" + key + "': not an integer: " + s);
    return v;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::uint64_t v = 0;
    const std::string& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw InvalidArgument("key '" + key + "': not an unsigned integer: " + s);
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw InvalidArgument("key '" + key + "': not a boolean: " + s);
  }

  /// Comma-separated doubles.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::string item;
    std::istringstream is(it->second);
    while (std::getline(is, item, ',')) out.push_back(to_double(key, trim(item)));
    if (out.empty()) throw InvalidArgument("key '" + key + "': empty list");
    return out;
  }

  void reject_unused() const {
    std::string unknown;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    }
    if (!unknown.empty()) throw InvalidArgument("unknown config keys: " + unknown);
  }

  /// Sorted key=value lines, the text hashed for provenance.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  std::uint64_t hash() const {
    io::Fnv1a h;
    h.add_bytes(canonical());
    return h.value();
  }

 private:
  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
  }

  static double to_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      throw InvalidArgument("key '" + key + "': not a finite number: " + s);
    }
    return v;
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace bsdiff
