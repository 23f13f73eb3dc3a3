#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "bte/common.hpp"

namespace bte::stats {

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

inline double normal_two_sided_p(double z) {
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(0.0, 1.0), std::abs(z)));
}

inline double t_two_sided_p(double t, double df) {
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(df), std::abs(t)));
}

inline double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample variance (n - 1 divisor).
inline double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

// Plotting positions (k - 0.5) / n mapped through the standard normal quantile.
inline std::vector<double> normal_scores(std::size_t n) {
  std::vector<double> z(n);
  for (std::size_t k = 0; k < n; ++k) z[k] = normal_quantile((static_cast<double>(k) + 0.5) / static_cast<double>(n));
  return z;
}

struct SlopeTest {
  double intercept{0.0};
  double slope{0.0};
  double se{0.0};
  double t{0.0};
  double p{1.0};
  std::size_t n{0};
};

// Simple linear regression of y on x with a t-test on the slope.
inline SlopeTest slope_test(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3) throw DataError("slope_test needs >= 3 paired observations");
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw DataError("slope_test: predictor has zero variance");
  SlopeTest r;
  r.n = x.size();
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - r.intercept - r.slope * x[i];
    rss += e * e;
  }
  const double df = static_cast<double>(x.size()) - 2.0;
  r.se = std::sqrt(rss / df / sxx);
  if (r.se > 0.0) {
    r.t = r.slope / r.se;
    r.p = t_two_sided_p(r.t, df);
  } else {
    r.t = r.slope == 0.0 ? 0.0 : std::copysign(INFINITY, r.slope);
    r.p = r.slope == 0.0 ? 1.0 : 0.0;
  }
  return r;
}

}  // namespace bte::stats
