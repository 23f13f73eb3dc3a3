#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace bte {

// Error categories. The CLI maps each onto a distinct exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Calendar quarter on the UTC calendar.
struct Quarter {
  int year{1998};
  int quarter{1};  // 1..4

  constexpr Quarter() = default;
  constexpr Quarter(int y, int q) : year(y), quarter(q) {
    if (q < 1 || q > 4) throw std::invalid_argument("quarter index must be in 1..4");
  }

  // Quarters since year 0, Q1. Differences of indices are exact quarter counts.
  [[nodiscard]] constexpr std::int64_t index() const noexcept {
    return static_cast<std::int64_t>(year) * 4 + (quarter - 1);
  }

  static constexpr Quarter from_index(std::int64_t idx) {
    std::int64_t y = idx >= 0 ? idx / 4 : -((-idx + 3) / 4);
    return Quarter(static_cast<int>(y), static_cast<int>(idx - y * 4) + 1);
  }

  static Quarter from_unix(std::int64_t seconds) {
    using namespace std::chrono;
    const auto day = floor<days>(sys_seconds{std::chrono::seconds{seconds}});
    const year_month_day ymd{day};
    const int month = static_cast<int>(static_cast<unsigned>(ymd.month()));
    return Quarter(static_cast<int>(ymd.year()), (month - 1) / 3 + 1);
  }

  // First second of the quarter, UTC.
  [[nodiscard]] std::int64_t start_unix() const {
    using namespace std::chrono;
    const sys_days d{std::chrono::year{year} / std::chrono::month{static_cast<unsigned>((quarter - 1) * 3 + 1)} / 1};
    return duration_cast<std::chrono::seconds>(d.time_since_epoch()).count();
  }

  [[nodiscard]] std::string str() const { return std::to_string(year) + "Q" + std::to_string(quarter); }

  friend constexpr auto operator<=>(const Quarter& a, const Quarter& b) noexcept { return a.index() <=> b.index(); }
  friend constexpr bool operator==(const Quarter& a, const Quarter& b) noexcept { return a.index() == b.index(); }
};

inline constexpr Quarter kDatasetOrigin{1998, 1};

// Fractional years between `origin` and `q`.
inline constexpr double years_since(Quarter q, Quarter origin = kDatasetOrigin) noexcept {
  return static_cast<double>(q.index() - origin.index()) / 4.0;
}

// Parse "2008Q3".
inline std::optional<Quarter> parse_quarter(std::string_view s) {
  auto pos = s.find_first_of("Qq");
  if (pos == std::string_view::npos || pos + 2 != s.size()) return std::nullopt;
  int y = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + pos, y);
  if (ec != std::errc{} || p != s.data() + pos) return std::nullopt;
  int q = s[pos + 1] - '0';
  if (q < 1 || q > 4) return std::nullopt;
  return Quarter(y, q);
}

// 64-bit FNV-1a; stable across platforms and runs (partitioning must be reproducible).
inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Shortest round-trip decimal form; CSV outputs must re-read bit-exactly.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string_view trim(std::string_view s) noexcept {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

template <class Int>
inline std::optional<Int> parse_int(std::string_view s) {
  s = trim(s);
  Int v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace bte
