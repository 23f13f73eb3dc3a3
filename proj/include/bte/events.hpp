#pragma once

#include <algorithm>
#include <initializer_list>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "bte/common.hpp"
#include "bte/ingest.hpp"
#include "bte/io.hpp"
#include "bte/preference.hpp"

namespace bte {

// One Barrier-to-Exit measurement.
struct BteEvent {
  std::string user_id;
  std::string category;
  Quarter t_x;                // last point above the upper threshold
  Quarter t_y;                // first subsequent point below the lower threshold
  double value{0.0};          // sum of strictly-between preferences, > 0
  std::uint64_t activity{0};  // user's ratings in (t_x, t_y], all categories
  double time_years{0.0};

  friend bool operator==(const BteEvent&, const BteEvent&) = default;
};

enum class TimeAnchor { midpoint, closing };

inline TimeAnchor parse_time_anchor(std::string_view s) {
  if (s == "midpoint") return TimeAnchor::midpoint;
  if (s == "closing" || s == "t_y") return TimeAnchor::closing;
  throw ConfigError("unknown time anchor '" + std::string(s) + "' (expected midpoint or closing)");
}

inline double event_time_years(Quarter t_x, Quarter t_y, Quarter origin = kDatasetOrigin,
                               TimeAnchor anchor = TimeAnchor::midpoint) {
  const double q = anchor == TimeAnchor::midpoint ? 0.5 * static_cast<double>(t_x.index() + t_y.index())
                                                  : static_cast<double>(t_y.index());
  return (q - static_cast<double>(origin.index())) / 4.0;
}

// Positions (into the scanned point list) of one episode.
struct EpisodeSpan {
  std::size_t open{0};   // index of the opening above-threshold point
  std::size_t close{0};  // index of the closing below-threshold point
  double value{0.0};
  std::size_t between{0};

  friend bool operator==(const EpisodeSpan&, const EpisodeSpan&) = default;
};

// Single left-to-right scan. A point above X (re)opens an episode, a point
// strictly between the thresholds accumulates into the open episode, and a
// point below Y closes it; closed episodes without a between point are
// discarded. Points equal to a threshold, or lacking a threshold at their
// quarter, are ignored.
inline std::vector<EpisodeSpan> scan_episodes(std::span<const SeriesPoint> points, const ThresholdSeries& thr) {
  std::vector<EpisodeSpan> out;
  bool open = false;
  EpisodeSpan cur;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto* t = thr.at(points[k].quarter);
    if (t == nullptr) continue;
    const double c = points[k].c;
    if (c > t->upper) {
      open = true;
      cur = EpisodeSpan{k, k, 0.0, 0};
    } else if (c < t->lower) {
      if (open && cur.between > 0) {
        cur.close = k;
        out.push_back(cur);
      }
      open = false;
    } else if (c > t->lower && c < t->upper) {
      if (open) {
        cur.value += c;
        ++cur.between;
      }
    }
  }
  return out;
}

// Prefix sums of a user's per-quarter rating counts.
class ActivityIndex {
 public:
  ActivityIndex() = default;
  explicit ActivityIndex(std::span<const ActivityRow> rows) {
    for (const auto& r : rows) by_user_[r.user_id].emplace_back(r.quarter.index(), r.rating_count);
    for (auto& [_, v] : by_user_) {
      std::sort(v.begin(), v.end());
      std::uint64_t run = 0;
      for (auto& [q, n] : v) {
        run += n;
        n = run;
      }
    }
  }

  // Ratings in (from, to].
  [[nodiscard]] std::uint64_t between(const std::string& user, Quarter from, Quarter to) const {
    auto it = by_user_.find(user);
    if (it == by_user_.end()) return 0;
    return cumulative(it->second, to.index()) - cumulative(it->second, from.index());
  }

 private:
  static std::uint64_t cumulative(const std::vector<std::pair<std::int64_t, std::uint64_t>>& v, std::int64_t q) {
    auto it = std::upper_bound(v.begin(), v.end(), q, [](std::int64_t x, const auto& e) { return x < e.first; });
    return it == v.begin() ? 0 : std::prev(it)->second;
  }
  std::unordered_map<std::string, std::vector<std::pair<std::int64_t, std::uint64_t>>> by_user_;
};

inline std::vector<BteEvent> extract_events(const PreferenceSeries& pref, const ThresholdSeries& thr,
                                            const ActivityIndex& activity, Quarter origin = kDatasetOrigin,
                                            TimeAnchor anchor = TimeAnchor::midpoint) {
  if (!thr.user_id.empty() && thr.user_id != pref.user_id)
    throw DataError("extract_events: preference and threshold series belong to different users");
  std::vector<BteEvent> out;
  for (const auto& span : scan_episodes(pref.points, thr)) {
    BteEvent e;
    e.user_id = pref.user_id;
    e.category = pref.category;
    e.t_x = pref.points[span.open].quarter;
    e.t_y = pref.points[span.close].quarter;
    e.value = span.value;
    e.activity = activity.between(pref.user_id, e.t_x, e.t_y);
    if (e.activity == 0)
      throw DataError("activity table has no ratings for user " + pref.user_id + " in (" + e.t_x.str() + ", " +
                      e.t_y.str() + "]");
    e.time_years = event_time_years(e.t_x, e.t_y, origin, anchor);
    out.push_back(std::move(e));
  }
  return out;
}

// Events for every (user, category) series. `series` must be sorted by user.
inline std::vector<BteEvent> extract_all_events(std::span<const PreferenceSeries> series,
                                                std::span<const ThresholdSeries> thresholds,
                                                const ActivityIndex& activity, Quarter origin = kDatasetOrigin,
                                                TimeAnchor anchor = TimeAnchor::midpoint) {
  std::unordered_map<std::string, const ThresholdSeries*> thr_by_user;
  for (const auto& t : thresholds) thr_by_user.emplace(t.user_id, &t);
  std::vector<BteEvent> out;
  for (const auto& s : series) {
    auto it = thr_by_user.find(s.user_id);
    if (it == thr_by_user.end()) continue;
    auto ev = extract_events(s, *it->second, activity, origin, anchor);
    out.insert(out.end(), std::make_move_iterator(ev.begin()), std::make_move_iterator(ev.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analysis table: one row per event, natural logs of value and activity.

struct AnalysisTable {
  std::vector<std::string> user;
  std::vector<std::string> category;
  std::vector<double> time_years;
  std::vector<double> log_value;
  std::vector<double> log_activity;

  [[nodiscard]] std::size_t size() const noexcept { return log_value.size(); }
  [[nodiscard]] bool empty() const noexcept { return log_value.empty(); }

  void push_back(std::string u, std::string c, double t, double y, double a) {
    user.push_back(std::move(u));
    category.push_back(std::move(c));
    time_years.push_back(t);
    log_value.push_back(y);
    log_activity.push_back(a);
  }

  [[nodiscard]] const std::vector<double>& numeric(std::string_view name) const {
    if (name == "time_years") return time_years;
    if (name == "log_value") return log_value;
    if (name == "log_activity") return log_activity;
    throw ConfigError("unknown numeric column '" + std::string(name) + "'");
  }
  [[nodiscard]] const std::vector<std::string>& grouping(std::string_view name) const {
    if (name == "user") return user;
    if (name == "category") return category;
    throw ConfigError("unknown grouping column '" + std::string(name) + "'");
  }

  // Rows whose `keep` flag is set.
  [[nodiscard]] AnalysisTable subset(const std::vector<bool>& keep) const {
    AnalysisTable t;
    for (std::size_t i = 0; i < size(); ++i)
      if (keep[i]) t.push_back(user[i], category[i], time_years[i], log_value[i], log_activity[i]);
    return t;
  }
};

inline AnalysisTable event_table(std::span<const BteEvent> events, Quarter origin = kDatasetOrigin,
                                 TimeAnchor anchor = TimeAnchor::midpoint) {
  AnalysisTable t;
  for (const auto& e : events) {
    if (!(e.value > 0.0)) throw DataError("event with non-positive value for user " + e.user_id);
    if (e.activity < 1) throw DataError("event with zero activity for user " + e.user_id);
    t.push_back(e.user_id, e.category, event_time_years(e.t_x, e.t_y, origin, anchor), std::log(e.value),
                std::log(static_cast<double>(e.activity)));
  }
  return t;
}

inline void write_events_csv(std::span<const BteEvent> events, const io::fs::path& path) {
  io::CsvWriter w(path, {"user_id", "category", "t_x", "t_y", "value", "activity", "time_years"});
  for (const auto& e : events)
    w.field(e.user_id)
        .field(e.category)
        .field(e.t_x.str())
        .field(e.t_y.str())
        .field(e.value)
        .field(e.activity)
        .field(e.time_years)
        .end_row();
  w.close();
}

inline std::vector<BteEvent> read_events_csv(const io::fs::path& path) {
  io::CsvReader r(path);
  auto cu = r.column("user_id"), cc = r.column("category"), cx = r.column("t_x"), cy = r.column("t_y"),
       cv = r.column("value"), ca = r.column("activity"), ct = r.column("time_years");
  std::vector<BteEvent> out;
  std::vector<std::string> f;
  while (r.next(f)) {
    auto tx = parse_quarter(f[cx]);
    auto ty = parse_quarter(f[cy]);
    if (!tx || !ty) throw DataError(r.path() + ": bad quarter at line " + std::to_string(r.line_number()));
    out.push_back({f[cu], f[cc], *tx, *ty, r.number(f, cv), r.integer<std::uint64_t>(f, ca), r.number(f, ct)});
  }
  return out;
}

// Analysis table straight from an events file; time comes from the stored column.
inline AnalysisTable read_analysis_table(const io::fs::path& events_csv) {
  AnalysisTable t;
  for (const auto& e : read_events_csv(events_csv)) {
    if (!(e.value > 0.0) || e.activity < 1 || !std::isfinite(e.value) || !std::isfinite(e.time_years))
      throw DataError(events_csv.string() + ": invalid event for user " + e.user_id + " (" + e.category + ")");
    t.push_back(e.user_id, e.category, e.time_years, std::log(e.value), std::log(static_cast<double>(e.activity)));
  }
  return t;
}

inline constexpr std::string_view kAnalysisHeader[] = {"user_id", "category", "time_years",
                                                                           "log_value", "log_activity"};

inline void write_analysis_csv(const AnalysisTable& t, const io::fs::path& path) {
  io::CsvWriter w(path, kAnalysisHeader);
  for (std::size_t i = 0; i < t.size(); ++i)
    w.field(t.user[i]).field(t.category[i]).field(t.time_years[i]).field(t.log_value[i]).field(t.log_activity[i]).end_row();
  w.close();
}

// Reads either an analysis table (log columns present) or an events file.
inline AnalysisTable read_table_auto(const io::fs::path& path) {
  io::CsvReader r(path);
  if (!r.has_column("log_value")) return read_analysis_table(path);
  auto cu = r.column("user_id"), cc = r.column("category"), ct = r.column("time_years"), cv = r.column("log_value"),
       ca = r.column("log_activity");
  AnalysisTable t;
  std::vector<std::string> f;
  while (r.next(f)) t.push_back(f[cu], f[cc], r.number(f, ct), r.number(f, cv), r.number(f, ca));
  return t;
}

}  // namespace bte
