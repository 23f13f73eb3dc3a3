#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bte/common.hpp"
#include "bte/ingest.hpp"
#include "bte/io.hpp"

namespace bte {

struct SeriesPoint {
  Quarter quarter;
  double c{0.0};             // revealed preference: sum of m * r in the quarter
  std::uint64_t count{1};    // contributing ratings

  friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

// Revealed-preference series of one user for one category, strictly
// increasing in quarter.
struct PreferenceSeries {
  std::string user_id;
  std::string category;
  std::vector<SeriesPoint> points;

  friend bool operator==(const PreferenceSeries&, const PreferenceSeries&) = default;
};

// One series per (user, category), sorted by (user, category). Duplicate keys
// are summed; zero-count rows are dropped.
inline std::vector<PreferenceSeries> build_series(std::span<const QuarterRow> table) {
  std::map<std::pair<std::string, std::string>, std::map<std::int64_t, SeriesPoint>> acc;
  for (const auto& r : table) {
    if (r.rating_count == 0) continue;
    auto& pts = acc[{r.user_id, r.category}];
    auto [it, fresh] = pts.try_emplace(r.quarter.index(), SeriesPoint{r.quarter, 0.0, 0});
    it->second.c += r.preference_sum;
    it->second.count += r.rating_count;
  }
  std::vector<PreferenceSeries> out;
  out.reserve(acc.size());
  for (auto& [key, pts] : acc) {
    PreferenceSeries s{key.first, key.second, {}};
    s.points.reserve(pts.size());
    for (auto& [_, p] : pts) s.points.push_back(p);
    out.push_back(std::move(s));
  }
  return out;
}

struct WindowConfig {
  int window_quarters{8};            // v; window is (t - v, t]
  std::size_t min_window_points{2};
  double sigma_mult{2.0};

  void validate() const {
    if (window_quarters < 1) throw ConfigError("window_quarters must be >= 1");
    if (min_window_points < 2) throw ConfigError("min_window_points must be >= 2 (std of one point is undefined)");
    if (!(sigma_mult > 0.0)) throw ConfigError("sigma_mult must be > 0");
  }
};

struct ThresholdPoint {
  Quarter quarter;
  double upper{0.0};  // X_t
  double lower{0.0};  // Y_t

  friend bool operator==(const ThresholdPoint&, const ThresholdPoint&) = default;
};

struct ThresholdSeries {
  std::string user_id;
  std::vector<ThresholdPoint> points;  // strictly increasing quarters

  [[nodiscard]] const ThresholdPoint* at(Quarter q) const {
    auto it = std::lower_bound(points.begin(), points.end(), q,
                               [](const ThresholdPoint& p, Quarter x) { return p.quarter < x; });
    if (it == points.end() || it->quarter != q) return nullptr;
    return &*it;
  }

  friend bool operator==(const ThresholdSeries&, const ThresholdSeries&) = default;
};

struct Band {
  double mean{0.0};
  double stddev{0.0};
};

// Mean and sample standard deviation (n - 1 divisor); requires n >= 2.
inline Band window_band(std::span<const double> values) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

// Category-specific thresholds at quarter t from the points in (t - v, t].
inline std::optional<std::pair<double, double>> category_thresholds(std::span<const SeriesPoint> points, Quarter t,
                                                                    const WindowConfig& cfg) {
  const std::int64_t hi = t.index();
  const std::int64_t lo = hi - cfg.window_quarters;
  std::vector<double> window;
  for (const auto& p : points) {
    const auto q = p.quarter.index();
    if (q > lo && q <= hi) window.push_back(p.c);
  }
  if (window.size() < cfg.min_window_points) return std::nullopt;
  auto b = window_band(window);
  return std::pair{b.mean + cfg.sigma_mult * b.stddev, b.mean - cfg.sigma_mult * b.stddev};
}

// Category-averaged interaction thresholds for one user. Evaluated at every
// quarter in which the user has any observation; each category contributes
// only where its own window holds enough points.
inline ThresholdSeries rolling_thresholds(std::span<const PreferenceSeries> user_series, const WindowConfig& cfg) {
  cfg.validate();
  ThresholdSeries out;
  if (user_series.empty()) return out;
  out.user_id = user_series.front().user_id;
  std::vector<std::int64_t> quarters;
  for (const auto& s : user_series) {
    if (s.user_id != out.user_id) throw DataError("rolling_thresholds: series belong to different users");
    for (const auto& p : s.points) quarters.push_back(p.quarter.index());
  }
  std::sort(quarters.begin(), quarters.end());
  quarters.erase(std::unique(quarters.begin(), quarters.end()), quarters.end());

  // Per-category two-pointer window over sorted points.
  std::vector<std::size_t> lo_ptr(user_series.size(), 0), hi_ptr(user_series.size(), 0);
  std::vector<double> window;
  for (std::int64_t t : quarters) {
    double sum_x = 0.0, sum_y = 0.0;
    std::size_t defined = 0;
    for (std::size_t s = 0; s < user_series.size(); ++s) {
      const auto& pts = user_series[s].points;
      auto& lo = lo_ptr[s];
      auto& hi = hi_ptr[s];
      while (hi < pts.size() && pts[hi].quarter.index() <= t) ++hi;
      while (lo < hi && pts[lo].quarter.index() <= t - cfg.window_quarters) ++lo;
      if (hi - lo < cfg.min_window_points) continue;
      window.clear();
      for (std::size_t k = lo; k < hi; ++k) window.push_back(pts[k].c);
      auto b = window_band(window);
      sum_x += b.mean + cfg.sigma_mult * b.stddev;
      sum_y += b.mean - cfg.sigma_mult * b.stddev;
      ++defined;
    }
    if (defined == 0) continue;
    out.points.push_back({Quarter::from_index(t), sum_x / static_cast<double>(defined),
                          sum_y / static_cast<double>(defined)});
  }
  return out;
}

// Groups sorted series by user: returns [begin, end) index ranges.
inline std::vector<std::pair<std::size_t, std::size_t>> user_ranges(std::span<const PreferenceSeries> series) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < series.size()) {
    std::size_t j = i;
    while (j < series.size() && series[j].user_id == series[i].user_id) ++j;
    out.emplace_back(i, j);
    i = j;
  }
  return out;
}

inline std::vector<ThresholdSeries> all_thresholds(std::span<const PreferenceSeries> series, const WindowConfig& cfg) {
  std::vector<ThresholdSeries> out;
  for (auto [b, e] : user_ranges(series)) {
    auto t = rolling_thresholds(series.subspan(b, e - b), cfg);
    if (!t.points.empty()) out.push_back(std::move(t));
  }
  return out;
}

inline void write_thresholds_csv(std::span<const ThresholdSeries> thresholds, const io::fs::path& path) {
  io::CsvWriter w(path, {"user_id", "year", "quarter", "X", "Y"});
  for (const auto& t : thresholds)
    for (const auto& p : t.points)
      w.field(t.user_id).field(p.quarter.year).field(p.quarter.quarter).field(p.upper).field(p.lower).end_row();
  w.close();
}

inline std::vector<ThresholdSeries> read_thresholds_csv(const io::fs::path& path) {
  io::CsvReader r(path);
  auto cu = r.column("user_id"), cy = r.column("year"), cq = r.column("quarter"), cx = r.column("X"),
       cyy = r.column("Y");
  std::map<std::string, std::vector<ThresholdPoint>> by_user;
  std::vector<std::string> f;
  while (r.next(f))
    by_user[f[cu]].push_back(
        {Quarter(r.integer<int>(f, cy), r.integer<int>(f, cq)), r.number(f, cx), r.number(f, cyy)});
  std::vector<ThresholdSeries> out;
  for (auto& [u, pts] : by_user) {
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.quarter < b.quarter; });
    out.push_back({u, std::move(pts)});
  }
  return out;
}

}  // namespace bte
