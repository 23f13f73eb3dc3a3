#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "bte/common.hpp"
#include "bte/io.hpp"

namespace bte {

// Flat `key = value` configuration. `#` starts a comment outside double
// quotes; quoted values may contain `#` and surrounding spaces.
class FlatConfig {
 public:
  FlatConfig() = default;

  static FlatConfig parse(std::string_view text, const std::string& source = "<config>") {
    FlatConfig c;
    std::size_t line_no = 0;
    while (!text.empty()) {
      const auto nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
      ++line_no;
      bool quoted = false;
      std::size_t cut = line.size();
      for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) {
          cut = i;
          break;
        }
      }
      line = trim(line.substr(0, cut));
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
      auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      c.values_.insert_or_assign(std::string(key), std::string(value));
    }
    return c;
  }

  static FlatConfig load(const io::fs::path& path) {
    if (!io::fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse(io::read_file(path), path.string());
  }

  [[nodiscard]] bool has(std::string_view key) const { return values_.count(std::string(key)) > 0; }
  void set(std::string key, std::string value) { values_.insert_or_assign(std::move(key), std::move(value)); }

  [[nodiscard]] std::optional<std::string> raw(std::string_view key) const {
    auto it = values_.find(std::string(key));
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] std::string get_string(std::string_view key, std::string fallback) const {
    auto v = raw(key);
    return v ? *v : fallback;
  }

  [[nodiscard]] double get_double(std::string_view key, double fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    auto d = parse_double(*v);
    if (!d) throw ConfigError("config key '" + std::string(key) + "': not a number: " + *v);
    return *d;
  }

  [[nodiscard]] std::int64_t get_int(std::string_view key, std::int64_t fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    auto d = parse_int<std::int64_t>(*v);
    if (!d) throw ConfigError("config key '" + std::string(key) + "': not an integer: " + *v);
    return *d;
  }

  [[nodiscard]] std::uint64_t get_uint(std::string_view key, std::uint64_t fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    auto d = parse_int<std::uint64_t>(*v);
    if (!d) throw ConfigError("config key '" + std::string(key) + "': not a non-negative integer: " + *v);
    return *d;
  }

  [[nodiscard]] bool get_bool(std::string_view key, bool fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("config key '" + std::string(key) + "': not a boolean: " + *v);
  }

  // Rejects keys outside `allowed` (catches typos).
  void require_known(std::span<const std::string_view> allowed) const {
    for (const auto& [k, _] : values_)
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
        throw ConfigError("unknown config key '" + k + "'");
  }

  // Sorted, one entry per line: stable input for digests.
  [[nodiscard]] std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
    return s;
  }

  [[nodiscard]] const std::map<std::string, std::string>& entries() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace bte
