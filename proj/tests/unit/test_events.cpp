#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bte/events.hpp"
#include "oracles.hpp"

using namespace bte;

namespace {

const Quarter kStart(2001, 1);

PreferenceSeries path(std::vector<double> c, const std::string& user = "u") {
  PreferenceSeries s{user, "cat", {}};
  for (std::size_t i = 0; i < c.size(); ++i)
    s.points.push_back({Quarter::from_index(kStart.index() + static_cast<std::int64_t>(i)), c[i], 1});
  return s;
}

ThresholdSeries constant_band(std::size_t n, double x, double y, const std::string& user = "u") {
  ThresholdSeries t{user, {}};
  for (std::size_t i = 0; i < n; ++i)
    t.points.push_back({Quarter::from_index(kStart.index() + static_cast<std::int64_t>(i)), x, y});
  return t;
}

// One rating per quarter for the user over the span.
ActivityIndex flat_activity(std::size_t n, const std::string& user = "u") {
  std::vector<ActivityRow> rows;
  for (std::size_t i = 0; i < n; ++i)
    rows.push_back({user, Quarter::from_index(kStart.index() + static_cast<std::int64_t>(i)), 1});
  return ActivityIndex(rows);
}

std::vector<BteEvent> run(const std::vector<double>& c, double x = 4.0, double y = 2.0) {
  return extract_events(path(c), constant_band(c.size(), x, y), flat_activity(c.size()));
}

Quarter q(std::size_t i) { return Quarter::from_index(kStart.index() + static_cast<std::int64_t>(i)); }

}  // namespace

TEST(ExtractEvents, HandTrace) {
  auto ev = run({5, 3, 2.5, 1});
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_DOUBLE_EQ(ev[0].value, 5.5);
  EXPECT_EQ(ev[0].t_x, q(0));
  EXPECT_EQ(ev[0].t_y, q(3));
  EXPECT_EQ(ev[0].activity, 3u);  // (t_x, t_y] = quarters 1..3
}

TEST(ExtractEvents, DirectJumpHasNoEvent) { EXPECT_TRUE(run({5, 1}).empty()); }

TEST(ExtractEvents, NoClosingCrossingHasNoEvent) { EXPECT_TRUE(run({5, 3, 3.5}).empty()); }

TEST(ExtractEvents, TwoEventsSameCategory) {
  auto ev = run({5, 3, 1, 5, 2.8, 1});
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_DOUBLE_EQ(ev[0].value, 3.0);
  EXPECT_DOUBLE_EQ(ev[1].value, 2.8);
  EXPECT_EQ(ev[1].t_x, q(3));
  EXPECT_EQ(ev[1].t_y, q(5));
}

TEST(ExtractEvents, LatestAbovePointOpens) {
  auto ev = run({5, 3, 6, 2.5, 1});
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].t_x, q(2));
  EXPECT_DOUBLE_EQ(ev[0].value, 2.5);
}

TEST(ExtractEvents, ThresholdTiesAreIgnored) {
  // 4 == X does not open; 2 == Y neither accumulates nor closes.
  EXPECT_TRUE(run({4, 3, 1}).empty());
  auto ev = run({5, 2, 3, 4, 1});
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_DOUBLE_EQ(ev[0].value, 3.0);
}

TEST(ExtractEvents, MissingThresholdPointIsSkipped) {
  auto c = path({5, 0.1, 3, 1});
  auto thr = constant_band(4, 4, 2);
  thr.points.erase(thr.points.begin() + 1);  // 0.1 has no threshold: not a close
  auto ev = extract_events(c, thr, flat_activity(4));
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_DOUBLE_EQ(ev[0].value, 3.0);
  EXPECT_EQ(ev[0].t_y, q(3));
}

TEST(ExtractEvents, ActivityIsRightClosedAndCrossCategory) {
  std::vector<ActivityRow> rows = {{"u", q(0), 7}, {"u", q(1), 2}, {"u", q(2), 3}, {"u", q(3), 4}, {"u", q(4), 100}};
  auto ev = extract_events(path({5, 3, 2.5, 1}), constant_band(4, 4, 2), ActivityIndex(rows));
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].activity, 2u + 3u + 4u);
}

TEST(ExtractEvents, UserMismatchIsAnError) {
  EXPECT_THROW(extract_events(path({5, 3, 1}), constant_band(3, 4, 2, "other"), flat_activity(3)), DataError);
}

TEST(EventTable, LogIdentities) {
  BteEvent e{"u", "c", Quarter(2008, 1), Quarter(2008, 3), std::exp(1.0), 1, 0.0};
  std::vector<BteEvent> v = {e};
  auto t = event_table(v);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_NEAR(t.log_value[0], 1.0, 1e-15);
  EXPECT_EQ(t.log_activity[0], 0.0);
  EXPECT_DOUBLE_EQ(t.time_years[0], 10.25);
  EXPECT_TRUE(event_table(std::vector<BteEvent>{}).empty());
}

TEST(EventTable, ClosingAnchor) {
  EXPECT_DOUBLE_EQ(event_time_years(Quarter(2008, 1), Quarter(2008, 3), kDatasetOrigin, TimeAnchor::closing), 10.5);
  EXPECT_EQ(parse_time_anchor("t_y"), TimeAnchor::closing);
  EXPECT_THROW(parse_time_anchor("start"), ConfigError);
}

TEST(EventTable, RejectsInvalidEvents) {
  std::vector<BteEvent> zero = {{"u", "c", Quarter(2008, 1), Quarter(2008, 3), 0.0, 1, 0.0}};
  EXPECT_THROW(event_table(zero), DataError);
}

TEST(EventsIo, CsvRoundTrip) {
  oracle::TempDir tmp("ev");
  std::vector<BteEvent> ev = {{"u,1", "c \"x\"", Quarter(2008, 1), Quarter(2008, 3), 1.0 / 3.0, 4, 10.25},
                              {"v", "d", Quarter(1999, 4), Quarter(2001, 1), 7.5, 1, 2.125}};
  write_events_csv(ev, tmp / "e.csv");
  EXPECT_EQ(read_events_csv(tmp / "e.csv"), ev);
  auto t = read_table_auto(tmp / "e.csv");
  write_analysis_csv(t, tmp / "a.csv");
  auto t2 = read_table_auto(tmp / "a.csv");
  EXPECT_EQ(t2.log_value, t.log_value);
  EXPECT_EQ(t2.user, t.user);
}

// ---------------------------------------------------------------------------
// Randomized properties

namespace {

struct Case {
  std::vector<double> c;
  std::vector<std::optional<oracle::Band>> band;
};

Case random_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, 40), kind(0, 9);
  std::uniform_real_distribution<double> val(0.0, 10.0), w(0.0, 3.0);
  Case k;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) {
    const double mid = val(rng), half = std::min(w(rng), mid);  // preference sums are >= 0
    const int kd = kind(rng);
    if (kd == 0) {
      k.band.push_back(std::nullopt);
    } else {
      k.band.push_back(oracle::Band{mid + half, mid - half});
    }
    const auto& b = k.band.back();
    double c;
    if (!b) c = val(rng);
    else if (kd <= 3) c = b->upper + w(rng) + 0.01;          // above
    else if (kd <= 6) c = b->lower + (b->upper - b->lower) * std::uniform_real_distribution<double>(0.01, 0.99)(rng);
    else if (kd <= 8) c = std::max(0.0, b->lower - w(rng) - 0.01);  // below (or clipped)
    else c = val(rng) < 5.0 ? b->upper : b->lower;  // tie
    k.c.push_back(c);
  }
  return k;
}

std::pair<PreferenceSeries, ThresholdSeries> to_series(const Case& k) {
  PreferenceSeries s{"u", "cat", {}};
  ThresholdSeries t{"u", {}};
  for (std::size_t i = 0; i < k.c.size(); ++i) {
    s.points.push_back({q(i), k.c[i], 1});
    if (k.band[i]) t.points.push_back({q(i), k.band[i]->upper, k.band[i]->lower});
  }
  return {s, t};
}

}  // namespace

TEST(EventProperties, BruteForceEquivalencePositivityAndMultiplicity) {
  std::mt19937_64 rng(2024);
  int multi = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    auto k = random_case(rng);
    auto [s, t] = to_series(k);
    auto got = extract_events(s, t, flat_activity(k.c.size()));
    auto ref = oracle::episodes(k.c, k.band);
    std::sort(ref.begin(), ref.end(), [](const auto& a, const auto& b) { return a.close < b.close; });
    ASSERT_EQ(got.size(), ref.size()) << "trial " << trial;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].t_x, q(ref[i].open));
      EXPECT_EQ(got[i].t_y, q(ref[i].close));
      EXPECT_NEAR(got[i].value, ref[i].value, 1e-12);
      EXPECT_GT(got[i].value, 0.0);
      EXPECT_LT(got[i].t_x, got[i].t_y);
      EXPECT_GE(got[i].activity, 1u);
    }
    multi += got.size() >= 2;
  }
  EXPECT_GT(multi, 0);
}

TEST(EventProperties, ScaleCovariance) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lam(0.1, 20.0);
  for (int trial = 0; trial < 1000; ++trial) {
    auto k = random_case(rng);
    const double l = lam(rng);
    auto scaled = k;
    for (auto& c : scaled.c) c *= l;
    for (auto& b : scaled.band)
      if (b) *b = {b->upper * l, b->lower * l};
    auto [s0, t0] = to_series(k);
    auto [s1, t1] = to_series(scaled);
    auto e0 = extract_events(s0, t0, flat_activity(k.c.size()));
    auto e1 = extract_events(s1, t1, flat_activity(k.c.size()));
    ASSERT_EQ(e0.size(), e1.size());
    for (std::size_t i = 0; i < e0.size(); ++i) {
      EXPECT_EQ(e0[i].t_x, e1[i].t_x);
      EXPECT_EQ(e0[i].t_y, e1[i].t_y);
      EXPECT_NEAR(e1[i].value, l * e0[i].value, 1e-9 * std::abs(e1[i].value));
    }
  }
}

TEST(EventProperties, InsertingBetweenPointAddsItsValue) {
  std::mt19937_64 rng(13);
  int checked = 0;
  for (int trial = 0; trial < 2000 && checked < 300; ++trial) {
    auto k = random_case(rng);
    auto [s, t] = to_series(k);
    auto ev = extract_events(s, t, flat_activity(k.c.size()));
    if (ev.empty()) continue;
    const auto& e = ev.front();
    const auto open = static_cast<std::size_t>(e.t_x.index() - kStart.index());
    // Insert a strictly-between point right after the opening point.
    Case bigger = k;
    const oracle::Band nb{10.0, 0.5};
    const double extra = 4.2;
    bigger.c.insert(bigger.c.begin() + static_cast<long>(open) + 1, extra);
    bigger.band.insert(bigger.band.begin() + static_cast<long>(open) + 1, nb);
    auto [s2, t2] = to_series(bigger);
    auto ev2 = extract_events(s2, t2, flat_activity(bigger.c.size()));
    ASSERT_EQ(ev2.size(), ev.size());
    EXPECT_NEAR(ev2.front().value, e.value + extra, 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}
