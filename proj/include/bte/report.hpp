#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bte/events.hpp"
#include "bte/io.hpp"
#include "bte/lmm.hpp"
#include "bte/stats.hpp"

namespace bte::report {

struct QqPoint {
  double theoretical{0.0};
  double sample{0.0};
};

struct LevelQq {
  std::string factor;
  std::vector<std::string> levels;  // in sample order
  std::vector<QqPoint> points;
};

struct GroupHistogram {
  std::string factor;
  std::vector<std::pair<std::size_t, std::size_t>> bins;  // (observations per group, number of groups)
};

struct EffectRow {
  double x{0.0};
  double fit{0.0};
  double lower{0.0};
  double upper{0.0};
};

struct DiagnosticsBundle {
  std::vector<std::pair<double, double>> residual_vs_fitted;
  std::vector<QqPoint> residual_qq;               // raw residuals
  std::vector<QqPoint> standardized_residual_qq;  // residual / sigma
  std::vector<LevelQq> blup_qq;
  std::vector<GroupHistogram> observations_per_group;
  std::vector<std::pair<double, double>> activity_vs_bte;  // (log_activity, log_value)
  std::vector<std::pair<double, double>> bte_vs_time;      // (time_years, log_value)
  std::vector<EffectRow> time_effect;                      // back-transformed partial effect
};

// QQ pairs: sorted sample against normal quantiles at (k - 0.5) / n.
inline std::vector<QqPoint> qq(std::vector<double> sample) {
  std::sort(sample.begin(), sample.end());
  auto z = stats::normal_scores(sample.size());
  std::vector<QqPoint> out(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) out[i] = {z[i], sample[i]};
  return out;
}

// Fitted response over `grid` for one predictor, others at their means and
// random effects at zero. The interval is eta +/- z * SE(eta) from the
// fixed-effect covariance; with `exp_scale` all three columns are
// exponentiated (back-transform of a log response).
inline std::vector<EffectRow> partial_effect(const lmm::FitResult& fit, std::string_view predictor,
                                             std::span<const double> grid, bool exp_scale = false,
                                             double level = 0.95) {
  const std::size_t k = fit.coefficient_index(predictor);
  const auto p = static_cast<Eigen::Index>(fit.coefficients.size());
  const double z = stats::normal_quantile(0.5 + level / 2.0);
  std::vector<EffectRow> out;
  for (double g : grid) {
    Eigen::VectorXd x(p);
    for (Eigen::Index i = 0; i < p; ++i) x(i) = fit.predictor_means[static_cast<std::size_t>(i)];
    x(static_cast<Eigen::Index>(k)) = g;
    double eta = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) eta += x(i) * fit.coefficients[static_cast<std::size_t>(i)].estimate;
    const double se = std::sqrt(std::max(0.0, x.dot(fit.vcov * x)));
    EffectRow r{g, eta, eta - z * se, eta + z * se};
    if (exp_scale) r = {g, std::exp(r.fit), std::exp(r.lower), std::exp(r.upper)};
    out.push_back(r);
  }
  return out;
}

// Ratio of back-transformed predictions between two predictor values,
// exp(beta * (to - from)); for time this is the growth over the span.
inline double effect_ratio(const lmm::FitResult& fit, std::string_view predictor, double from, double to) {
  return lmm::exp_growth(fit.coefficient(predictor).estimate, to - from);
}

inline DiagnosticsBundle diagnostics(const lmm::FitResult& fit, const AnalysisTable& table) {
  if (table.empty()) throw DataError("diagnostics need a non-empty table");
  if (fit.n_obs != table.size() || fit.residuals.size() != table.size())
    throw DataError("fit has " + std::to_string(fit.n_obs) + " observations but the table has " +
                    std::to_string(table.size()) + " rows");
  DiagnosticsBundle b;
  for (std::size_t i = 0; i < table.size(); ++i) b.residual_vs_fitted.emplace_back(fit.fitted[i], fit.residuals[i]);
  b.residual_qq = qq(fit.residuals);
  const double sd = std::sqrt(fit.residual_variance);
  std::vector<double> st(fit.residuals);
  for (auto& v : st) v = sd > 0.0 ? v / sd : 0.0;
  b.standardized_residual_qq = qq(std::move(st));
  for (const auto& e : fit.blups) {
    std::vector<std::size_t> ord(e.values.size());
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t c) { return e.values[a] < e.values[c]; });
    LevelQq l{e.factor, {}, qq(e.values)};
    for (auto i : ord) l.levels.push_back(e.levels[i]);
    b.blup_qq.push_back(std::move(l));
  }
  for (const auto& e : fit.blups) {
    const auto& col = table.grouping(e.factor);
    std::map<std::string, std::size_t> per;
    for (const auto& v : col) ++per[v];
    std::map<std::size_t, std::size_t> hist;
    for (const auto& [_, n] : per) ++hist[n];
    b.observations_per_group.push_back({e.factor, {hist.begin(), hist.end()}});
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    b.activity_vs_bte.emplace_back(table.log_activity[i], table.log_value[i]);
    b.bte_vs_time.emplace_back(table.time_years[i], table.log_value[i]);
  }
  if (std::find_if(fit.coefficients.begin(), fit.coefficients.end(),
                   [](const auto& c) { return c.name == "time_years"; }) != fit.coefficients.end()) {
    const auto [lo, hi] = std::minmax_element(table.time_years.begin(), table.time_years.end());
    std::vector<double> grid;
    const double a = std::floor(*lo * 4.0) / 4.0, z = std::ceil(*hi * 4.0) / 4.0;
    for (double t = a; t <= z + 1e-9; t += 0.25) grid.push_back(t);
    b.time_effect = partial_effect(fit, "time_years", grid, true);
  }
  return b;
}

inline std::vector<std::string> write_bundle(const DiagnosticsBundle& b, const lmm::FitResult& fit,
                                             const io::fs::path& dir) {
  io::fs::create_directories(dir);
  std::vector<std::string> files;
  auto pairs = [&](const std::string& name, std::initializer_list<std::string_view> hdr, const auto& rows) {
    io::CsvWriter w(dir / name, hdr);
    for (const auto& [x, y] : rows) w.field(x).field(y).end_row();
    w.close();
    files.push_back(name);
  };
  pairs("residual_vs_fitted.csv", {"fitted", "residual"}, b.residual_vs_fitted);
  {
    io::CsvWriter w(dir / "residual_qq.csv", {"theoretical", "residual", "standardized"});
    for (std::size_t i = 0; i < b.residual_qq.size(); ++i)
      w.field(b.residual_qq[i].theoretical)
          .field(b.residual_qq[i].sample)
          .field(b.standardized_residual_qq[i].sample)
          .end_row();
    w.close();
    files.push_back("residual_qq.csv");
  }
  for (const auto& l : b.blup_qq) {
    const std::string name = "blup_qq_" + l.factor + ".csv";
    io::CsvWriter w(dir / name, {"level", "theoretical", "blup"});
    for (std::size_t i = 0; i < l.points.size(); ++i)
      w.field(l.levels[i]).field(l.points[i].theoretical).field(l.points[i].sample).end_row();
    w.close();
    files.push_back(name);
  }
  for (const auto& h : b.observations_per_group) {
    const std::string name = "observations_per_" + h.factor + ".csv";
    io::CsvWriter w(dir / name, {"observations", "groups"});
    for (const auto& [n, g] : h.bins) w.field(n).field(g).end_row();
    w.close();
    files.push_back(name);
  }
  pairs("activity_vs_bte.csv", {"log_activity", "log_value"}, b.activity_vs_bte);
  pairs("bte_vs_time.csv", {"time_years", "log_value"}, b.bte_vs_time);
  if (!b.time_effect.empty()) {
    io::CsvWriter w(dir / "time_effect.csv", {"time_years", "fit", "lower", "upper"});
    for (const auto& r : b.time_effect) w.field(r.x).field(r.fit).field(r.lower).field(r.upper).end_row();
    w.close();
    files.push_back("time_effect.csv");

    // Endpoint summary. `fit_*` are exp(eta) at the grid ends; `ratio` is
    // their quotient exp(beta * span), the growth reported as a percentage.
    const double t0 = b.time_effect.front().x, t1 = b.time_effect.back().x;
    io::CsvWriter s(dir / "time_effect_summary.csv",
                    {"convention", "time_start", "time_end", "fit_start", "fit_end", "ratio", "growth_per_year"});
    s.field("exp(eta), other predictors at means, random effects 0")
        .field(t0)
        .field(t1)
        .field(b.time_effect.front().fit)
        .field(b.time_effect.back().fit)
        .field(effect_ratio(fit, "time_years", t0, t1))
        .field(lmm::exp_growth(fit.coefficient("time_years").estimate, 1.0))
        .end_row();
    s.close();
    files.push_back("time_effect_summary.csv");
  }
  return files;
}

}  // namespace bte::report
