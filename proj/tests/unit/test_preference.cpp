#include <gtest/gtest.h>

#include <random>
#include <set>

#include "bte/preference.hpp"
#include "oracles.hpp"

using namespace bte;

namespace {

PreferenceSeries series(const std::string& user, const std::string& cat, Quarter start, std::vector<double> c) {
  PreferenceSeries s{user, cat, {}};
  for (std::size_t i = 0; i < c.size(); ++i)
    s.points.push_back({Quarter::from_index(start.index() + static_cast<std::int64_t>(i)), c[i], 1});
  return s;
}

WindowConfig window(int v) { return WindowConfig{v, 2, 2.0}; }

}  // namespace

TEST(BuildSeries, SingleRowPassthrough) {
  std::vector<QuarterRow> rows = {{"u", "c", Quarter(1999, 2), 5.0, 1}};
  auto s = build_series(rows);
  ASSERT_EQ(s.size(), 1u);
  ASSERT_EQ(s[0].points.size(), 1u);
  EXPECT_EQ(s[0].points[0], (SeriesPoint{Quarter(1999, 2), 5.0, 1}));
}

TEST(BuildSeries, ShuffledInputGivesIdenticalSortedSeries) {
  std::vector<QuarterRow> rows = {
      {"u", "a", Quarter(2000, 1), 1.0, 1}, {"u", "a", Quarter(2000, 3), 3.0, 2}, {"u", "b", Quarter(2001, 1), 2.0, 1},
      {"v", "a", Quarter(1999, 4), 4.0, 3}, {"u", "a", Quarter(1999, 1), 0.5, 1}, {"v", "a", Quarter(2005, 2), 1.5, 1},
      {"u", "b", Quarter(2000, 2), 2.5, 1}, {"v", "c", Quarter(2003, 3), 9.0, 4}, {"u", "a", Quarter(2000, 2), 2.0, 1},
      {"v", "a", Quarter(2000, 1), 0.0, 0}};
  auto expect = build_series(rows);
  // Hand-built reference.
  std::vector<PreferenceSeries> hand = {
      {"u", "a",
       {{Quarter(1999, 1), 0.5, 1}, {Quarter(2000, 1), 1.0, 1}, {Quarter(2000, 2), 2.0, 1}, {Quarter(2000, 3), 3.0, 2}}},
      {"u", "b", {{Quarter(2000, 2), 2.5, 1}, {Quarter(2001, 1), 2.0, 1}}},
      {"v", "a", {{Quarter(1999, 4), 4.0, 3}, {Quarter(2005, 2), 1.5, 1}}},
      {"v", "c", {{Quarter(2003, 3), 9.0, 4}}}};
  EXPECT_EQ(expect, hand);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_EQ(build_series(rows), hand);
  }
}

TEST(Thresholds, ZeroVarianceWindow) {
  auto s = series("u", "c", Quarter(2000, 1), {3, 3, 3});
  auto t = category_thresholds(s.points, Quarter(2000, 3), window(8));
  ASSERT_TRUE(t);
  EXPECT_DOUBLE_EQ(t->first, 3.0);
  EXPECT_DOUBLE_EQ(t->second, 3.0);
}

TEST(Thresholds, OneToFiveUsesSampleStd) {
  auto s = series("u", "c", Quarter(2000, 1), {1, 2, 3, 4, 5});
  auto t = category_thresholds(s.points, Quarter(2001, 1), window(5));
  ASSERT_TRUE(t);
  EXPECT_NEAR(t->first, 3.0 + 2.0 * std::sqrt(2.5), 1e-12);
  EXPECT_NEAR(t->first, 6.16227766, 1e-8);
  EXPECT_NEAR(t->second, -0.16227766, 1e-8);
}

TEST(Thresholds, SinglePointWindowIsAbsent) {
  auto s = series("u", "c", Quarter(2000, 1), {4});
  std::vector<PreferenceSeries> v = {s};
  EXPECT_FALSE(category_thresholds(s.points, Quarter(2000, 1), window(8)).has_value());
  EXPECT_TRUE(rolling_thresholds(v, window(8)).points.empty());
}

TEST(Thresholds, WindowIsRightClosed) {
  // Points at quarters 0, 1, 2 (relative). Window v = 2 at t = 2 covers (0, 2].
  auto s = series("u", "c", Quarter(2000, 1), {100, 1, 3});
  auto t = category_thresholds(s.points, Quarter(2000, 3), window(2));
  ASSERT_TRUE(t);
  EXPECT_NEAR(t->first, 2.0 + 2.0 * std::sqrt(2.0), 1e-12);
}

TEST(Thresholds, CategoryAverageSkipsUndefinedCategories) {
  std::vector<PreferenceSeries> v = {series("u", "a", Quarter(2000, 1), {1, 3}),
                                     series("u", "b", Quarter(2000, 2), {10})};
  auto thr = rolling_thresholds(v, window(8));
  ASSERT_EQ(thr.points.size(), 1u);  // 2000Q1 has one point only; 2000Q2 has a's window
  EXPECT_EQ(thr.points[0].quarter, Quarter(2000, 2));
  EXPECT_NEAR(thr.points[0].upper, 2.0 + 2.0 * std::sqrt(2.0), 1e-12);

  v.push_back(series("u", "c", Quarter(2000, 1), {2, 2}));
  thr = rolling_thresholds(v, window(8));
  ASSERT_EQ(thr.points.size(), 1u);
  EXPECT_NEAR(thr.points[0].upper, 0.5 * (2.0 + 2.0 * std::sqrt(2.0) + 2.0), 1e-12);
  EXPECT_NEAR(thr.points[0].lower, 0.5 * (2.0 - 2.0 * std::sqrt(2.0) + 2.0), 1e-12);
}

TEST(Thresholds, ConfigValidation) {
  EXPECT_THROW((WindowConfig{0, 2, 2.0}.validate()), ConfigError);
  EXPECT_THROW((WindowConfig{8, 1, 2.0}.validate()), ConfigError);
  EXPECT_THROW((WindowConfig{8, 2, 0.0}.validate()), ConfigError);
  std::vector<PreferenceSeries> mixed = {series("u", "a", Quarter(2000, 1), {1, 2}),
                                         series("v", "a", Quarter(2000, 1), {1, 2})};
  EXPECT_THROW(rolling_thresholds(mixed, window(8)), DataError);
}

// ---------------------------------------------------------------------------
// Properties on random series

namespace {

std::vector<PreferenceSeries> random_user(std::mt19937_64& rng, const std::string& user) {
  std::uniform_int_distribution<int> ncat(1, 4), npts(1, 20), gap(1, 3);
  std::uniform_real_distribution<double> val(0.0, 20.0);
  std::vector<PreferenceSeries> out;
  const int k = ncat(rng);
  for (int c = 0; c < k; ++c) {
    PreferenceSeries s{user, "c" + std::to_string(c), {}};
    std::int64_t q = Quarter(1999, 1).index() + gap(rng);
    const int n = npts(rng);
    for (int i = 0; i < n; ++i) {
      s.points.push_back({Quarter::from_index(q), val(rng), 1});
      q += gap(rng);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Direct recomputation of the averaged band at t.
std::optional<std::pair<double, double>> reference_band(const std::vector<PreferenceSeries>& user, std::int64_t t,
                                                        int v) {
  double sx = 0, sy = 0;
  int used = 0;
  for (const auto& s : user) {
    std::vector<double> w;
    for (const auto& p : s.points)
      if (p.quarter.index() > t - v && p.quarter.index() <= t) w.push_back(p.c);
    if (w.size() < 2) continue;
    const double m = oracle::sample_mean(w), sd = oracle::sample_sd(w);
    sx += m + 2 * sd;
    sy += m - 2 * sd;
    ++used;
  }
  if (used == 0) return std::nullopt;
  return std::pair{sx / used, sy / used};
}

}  // namespace

TEST(ThresholdProperties, MatchesDirectRecomputation) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    auto user = random_user(rng, "u");
    const int v = 1 + trial % 9;
    auto thr = rolling_thresholds(user, window(v));
    std::set<std::int64_t> quarters;
    for (const auto& s : user)
      for (const auto& p : s.points) quarters.insert(p.quarter.index());
    std::size_t defined = 0;
    for (auto q : quarters) {
      auto ref = reference_band(user, q, v);
      const auto* got = thr.at(Quarter::from_index(q));
      ASSERT_EQ(ref.has_value(), got != nullptr);
      if (!ref) continue;
      ++defined;
      EXPECT_NEAR(got->upper, ref->first, 1e-9);
      EXPECT_NEAR(got->lower, ref->second, 1e-9);
      EXPECT_GE(got->upper, got->lower);
    }
    EXPECT_EQ(defined, thr.points.size());
  }
}

TEST(ThresholdProperties, ShiftAndScaleCovariance) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> d(-5.0, 5.0), l(0.1, 10.0);
  for (int trial = 0; trial < 300; ++trial) {
    auto user = random_user(rng, "u");
    const double delta = d(rng), lambda = l(rng);
    auto shifted = user, scaled = user;
    for (auto& s : shifted)
      for (auto& p : s.points) p.c += delta;
    for (auto& s : scaled)
      for (auto& p : s.points) p.c *= lambda;
    auto base = rolling_thresholds(user, window(8));
    auto ts = rolling_thresholds(shifted, window(8));
    auto tl = rolling_thresholds(scaled, window(8));
    ASSERT_EQ(base.points.size(), ts.points.size());
    ASSERT_EQ(base.points.size(), tl.points.size());
    for (std::size_t i = 0; i < base.points.size(); ++i) {
      EXPECT_NEAR(ts.points[i].upper, base.points[i].upper + delta, 1e-9);
      EXPECT_NEAR(ts.points[i].lower, base.points[i].lower + delta, 1e-9);
      EXPECT_NEAR(tl.points[i].upper, base.points[i].upper * lambda, 1e-9 * std::max(1.0, std::abs(tl.points[i].upper)));
      EXPECT_NEAR(tl.points[i].lower, base.points[i].lower * lambda, 1e-9 * std::max(1.0, std::abs(tl.points[i].lower)));
    }
  }
}

TEST(ThresholdProperties, WindowLocality) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    auto user = random_user(rng, "u");
    auto& s = user.front();
    if (s.points.size() < 3) continue;
    const int v = 4;
    const auto t = s.points.back().quarter;
    auto before = category_thresholds(s.points, t, window(v));
    // Perturb every point outside (t - v, t].
    auto changed = s.points;
    for (auto& p : changed)
      if (p.quarter.index() <= t.index() - v) p.c += 1000.0;
    auto after = category_thresholds(changed, t, window(v));
    ASSERT_EQ(before.has_value(), after.has_value());
    if (before) {
      EXPECT_EQ(before->first, after->first);
      EXPECT_EQ(before->second, after->second);
    }
  }
}

TEST(ThresholdIo, CsvRoundTrip) {
  oracle::TempDir tmp("thr");
  std::mt19937_64 rng(31);
  std::vector<ThresholdSeries> all;
  for (int u = 0; u < 10; ++u) {
    auto t = rolling_thresholds(random_user(rng, "u" + std::to_string(u)), window(6));
    if (!t.points.empty()) all.push_back(t);
  }
  write_thresholds_csv(all, tmp / "t.csv");
  EXPECT_EQ(read_thresholds_csv(tmp / "t.csv"), all);
}
