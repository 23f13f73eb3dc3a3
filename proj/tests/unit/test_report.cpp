#include <gtest/gtest.h>

#include <random>

#include "bte/fit_io.hpp"
#include "bte/report.hpp"
#include "oracles.hpp"

using namespace bte;

namespace {

AnalysisTable simulate(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u01;
  std::vector<double> ue(n / 5 + 1), ce(12);
  for (auto& v : ue) v = 0.4 * z(rng);
  for (auto& v : ce) v = 0.5 * z(rng);
  AnalysisTable t;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = i < ue.size() ? i : rng() % ue.size(), c = i < ce.size() ? i : rng() % ce.size();
    const double time = 20.0 * u01(rng), act = std::log(1.0 + static_cast<double>(rng() % 9));
    t.push_back("u" + std::to_string(a), "c" + std::to_string(c), time,
                0.3 + 0.018 * time + 0.6 * act + ue[a] + ce[c] + 0.5 * z(rng), act);
  }
  return t;
}

// Three-coefficient fit with a given time slope and a fixed covariance.
lmm::FitResult handmade(double b1) {
  lmm::FitResult f;
  f.coefficients = {{"(Intercept)", 0.3, 0.1, {}, 0, 1, false},
                    {"time_years", b1, 0.01, {}, 0, 1, false},
                    {"log_activity", 0.6, 0.05, {}, 0, 1, false}};
  f.vcov = Eigen::MatrixXd::Zero(3, 3);
  f.vcov(0, 0) = 0.01;
  f.vcov(1, 1) = 1e-4;
  f.vcov(2, 2) = 0.0025;
  f.vcov(0, 1) = f.vcov(1, 0) = -5e-4;
  f.predictor_means = {1.0, 10.0, 1.2};
  return f;
}

}  // namespace

TEST(Qq, NormalSampleTracksIdentity) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  std::vector<double> s(50000);
  for (auto& v : s) v = z(rng);
  auto q = report::qq(s);
  ASSERT_EQ(q.size(), s.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(q.size());
    if (p < 0.1 || p > 0.9) continue;
    EXPECT_NEAR(q[i].sample, q[i].theoretical, 0.05);
  }
  for (std::size_t i = 1; i < q.size(); ++i) {
    EXPECT_LE(q[i - 1].sample, q[i].sample);
    EXPECT_LT(q[i - 1].theoretical, q[i].theoretical);
  }
}

TEST(Qq, LeftSkewedLowerTailFallsBelowLine) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  std::vector<double> s(20000);
  for (auto& v : s) v = -std::exp(0.8 * z(rng));
  const double m = oracle::sample_mean(s), sd = oracle::sample_sd(s);
  for (auto& v : s) v = (v - m) / sd;
  auto q = report::qq(s);
  const std::size_t lo = q.size() / 100;  // 1% point
  EXPECT_LT(q[lo].sample, q[lo].theoretical);
  EXPECT_LT(q.front().sample, q.front().theoretical);
  // The upper tail is compressed instead.
  EXPECT_LT(q[q.size() - lo].sample, q[q.size() - lo].theoretical);
}

TEST(PartialEffect, OnePointGridWidth) {
  auto f = handmade(0.018);
  std::vector<double> grid = {12.0};
  auto r = report::partial_effect(f, "time_years", grid, false, 0.95);
  ASSERT_EQ(r.size(), 1u);
  Eigen::Vector3d x(1.0, 12.0, 1.2);
  const double se = std::sqrt(x.dot(f.vcov * x));
  EXPECT_NEAR(r[0].upper - r[0].lower, 2.0 * 1.959963984540054 * se, 1e-12);
  EXPECT_NEAR(r[0].fit, 0.3 + 0.018 * 12.0 + 0.6 * 1.2, 1e-12);
}

TEST(PartialEffect, ZeroSlopeIsFlat) {
  auto f = handmade(0.0);
  std::vector<double> grid = {0, 5, 10, 15, 20};
  for (bool e : {false, true}) {
    auto r = report::partial_effect(f, "time_years", grid, e);
    for (const auto& row : r) EXPECT_DOUBLE_EQ(row.fit, r[0].fit);
  }
}

TEST(PartialEffect, BackTransformAndRatio) {
  auto f = handmade(0.018);
  std::vector<double> grid = {0, 20};
  auto raw = report::partial_effect(f, "time_years", grid);
  auto ex = report::partial_effect(f, "time_years", grid, true);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(ex[i].fit, std::exp(raw[i].fit), 1e-12);
    EXPECT_NEAR(ex[i].lower, std::exp(raw[i].lower), 1e-12);
    EXPECT_LE(ex[i].lower, ex[i].fit);
    EXPECT_GE(ex[i].upper, ex[i].fit);
  }
  EXPECT_NEAR(ex[1].fit / ex[0].fit, report::effect_ratio(f, "time_years", 0, 20), 1e-12);
  EXPECT_NEAR(report::effect_ratio(f, "time_years", 0, 20), 1.433, 0.001);
}

TEST(PartialEffect, UnknownPredictorIsAnError) {
  auto f = handmade(0.018);
  std::vector<double> grid = {1};
  EXPECT_THROW(report::partial_effect(f, "shoe_size", grid), ConfigError);
}

TEST(Diagnostics, BundleContentsAndSizeMismatch) {
  auto t = simulate(600, 3);
  auto fit = lmm::fit_reml(t, lmm::ModelSpec::full());
  auto b = report::diagnostics(fit, t);
  EXPECT_EQ(b.residual_vs_fitted.size(), t.size());
  EXPECT_EQ(b.residual_qq.size(), t.size());
  ASSERT_EQ(b.blup_qq.size(), 2u);
  EXPECT_EQ(b.blup_qq[1].points.size(), 12u);
  std::size_t users = 0, obs = 0;
  for (const auto& [k, g] : b.observations_per_group[0].bins) {
    users += g;
    obs += k * g;
  }
  EXPECT_EQ(users, fit.component("user").levels);
  EXPECT_EQ(obs, t.size());
  ASSERT_FALSE(b.time_effect.empty());
  EXPECT_LT(std::abs(oracle::sample_mean(fit.residuals)), 1e-8);

  auto shorter = t.subset(std::vector<bool>(t.size(), true));
  shorter.push_back("u0", "c0", 1.0, 1.0, 0.0);
  EXPECT_THROW(report::diagnostics(fit, shorter), DataError);
}

TEST(Diagnostics, WrittenBundleIsByteIdentical) {
  auto t = simulate(400, 4);
  auto fit = lmm::fit_reml(t, lmm::ModelSpec::full());
  oracle::TempDir a("ra"), b("rb");
  auto fa = report::write_bundle(report::diagnostics(fit, t), fit, a.path());
  auto fb = report::write_bundle(report::diagnostics(fit, t), fit, b.path());
  ASSERT_EQ(fa, fb);
  EXPECT_GE(fa.size(), 8u);
  for (const auto& name : fa) EXPECT_EQ(io::read_file(a / name), io::read_file(b / name)) << name;
  auto summary = io::read_file(a / "time_effect_summary.csv");
  EXPECT_NE(summary.find("exp(eta)"), std::string::npos);
}
