#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "bte/common.hpp"
#include "bte/events.hpp"
#include "bte/stats.hpp"

namespace bte::lmm {

// ---------------------------------------------------------------------------
// Model description and design

struct ModelSpec {
  std::string response{"log_value"};
  std::vector<std::string> fixed{"time_years", "log_activity"};  // intercept is implicit
  std::vector<std::string> random{"user", "category"};

  static ModelSpec full() { return {}; }
  static ModelSpec no_activity() { return {"log_value", {"time_years"}, {"user", "category"}}; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline ModelSpec parse_model(std::string_view name) {
  if (name == "full") return ModelSpec::full();
  if (name == "no-activity" || name == "no_activity") return ModelSpec::no_activity();
  throw ConfigError("unknown model '" + std::string(name) + "' (expected full or no-activity)");
}

inline std::string model_name(const ModelSpec& s) {
  if (s == ModelSpec::full()) return "full";
  if (s == ModelSpec::no_activity()) return "no-activity";
  return "custom";
}

struct Factor {
  std::string name;
  std::vector<std::string> levels;   // sorted
  std::vector<std::uint32_t> index;  // per observation
};

struct ModelFrame {
  std::string response;
  std::vector<std::string> fixed_names;  // "(Intercept)" first
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  std::vector<Factor> factors;

  [[nodiscard]] Eigen::Index n() const noexcept { return y.size(); }
  [[nodiscard]] Eigen::Index p() const noexcept { return X.cols(); }
};

namespace detail {
inline Factor make_factor(std::string name, const std::vector<std::string>& labels) {
  Factor f;
  f.name = std::move(name);
  f.levels = labels;
  std::sort(f.levels.begin(), f.levels.end());
  f.levels.erase(std::unique(f.levels.begin(), f.levels.end()), f.levels.end());
  std::unordered_map<std::string, std::uint32_t> id;
  for (std::uint32_t i = 0; i < f.levels.size(); ++i) id.emplace(f.levels[i], i);
  f.index.reserve(labels.size());
  for (const auto& l : labels) f.index.push_back(id.at(l));
  return f;
}
}  // namespace detail

// Builds the design from raw columns. `x` excludes the intercept.
inline ModelFrame make_frame(std::string response, std::span<const double> y, std::vector<std::string> x_names,
                             const std::vector<std::vector<double>>& x,
                             const std::vector<std::pair<std::string, std::vector<std::string>>>& groups) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (n == 0) throw DataError("model frame has no observations");
  if (x.size() != x_names.size()) throw ConfigError("predictor names and columns differ in length");
  ModelFrame f;
  f.response = std::move(response);
  f.fixed_names.push_back("(Intercept)");
  f.y.resize(n);
  f.X.resize(n, static_cast<Eigen::Index>(x.size()) + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(y[static_cast<std::size_t>(i)]))
      throw DataError("non-finite response '" + f.response + "' at row " + std::to_string(i + 1));
    f.y(i) = y[static_cast<std::size_t>(i)];
    f.X(i, 0) = 1.0;
  }
  for (std::size_t c = 0; c < x.size(); ++c) {
    if (x[c].size() != y.size()) throw DataError("predictor '" + x_names[c] + "' has wrong length");
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = x[c][static_cast<std::size_t>(i)];
      if (!std::isfinite(v))
        throw DataError("non-finite predictor '" + x_names[c] + "' at row " + std::to_string(i + 1));
      f.X(i, static_cast<Eigen::Index>(c) + 1) = v;
    }
    f.fixed_names.push_back(x_names[c]);
  }
  for (const auto& [name, labels] : groups) {
    if (labels.size() != y.size()) throw DataError("grouping factor '" + name + "' has wrong length");
    auto fac = detail::make_factor(name, labels);
    if (fac.levels.size() < 2)
      throw ConfigError("grouping factor '" + name + "' needs >= 2 levels, found " +
                        std::to_string(fac.levels.size()));
    f.factors.push_back(std::move(fac));
  }
  return f;
}

inline ModelFrame make_frame(const AnalysisTable& t, const ModelSpec& spec) {
  std::vector<std::vector<double>> x;
  for (const auto& name : spec.fixed) x.push_back(t.numeric(name));
  std::vector<std::pair<std::string, std::vector<std::string>>> g;
  for (const auto& name : spec.random) g.emplace_back(name, t.grouping(name));
  return make_frame(spec.response, t.numeric(spec.response), spec.fixed, x, g);
}

// ---------------------------------------------------------------------------
// Profiled REML criterion for crossed random intercepts.
//
// With relative covariance factor Lambda = diag(theta_g) and A = Lambda Z'Z Lambda + I
// factored as P A P' = L L', the penalized least-squares system reduces to
//   cu = L^-1 P Lambda Z'y,  RZX = L^-1 P Lambda Z'X,  RX'RX = X'X - RZX'RZX,
// and the profiled criterion is
//   d(theta) = log|L|^2 + log|RX|^2 + (n-p)(1 + log(2 pi r^2 / (n-p))).

class RemlProblem {
 public:
  struct State {
    double deviance{0.0};
    double logdet_l{0.0};   // log|L|^2
    double logdet_rx{0.0};  // log|RX|^2
    double pwrss{0.0};      // penalized weighted residual sum of squares r^2
    Eigen::VectorXd beta;
    Eigen::VectorXd b;      // random effects on the data scale, Lambda u
    Eigen::MatrixXd rxtrx;  // RX'RX
  };

  explicit RemlProblem(const ModelFrame& f) : frame_(&f) {
    n_ = f.n();
    p_ = f.p();
    if (n_ <= p_) throw DataError("model needs more observations than fixed effects");
    Eigen::Index q = 0;
    for (const auto& fac : f.factors) {
      offsets_.push_back(q);
      q += static_cast<Eigen::Index>(fac.levels.size());
    }
    q_ = q;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n_) * f.factors.size());
    for (std::size_t g = 0; g < f.factors.size(); ++g)
      for (Eigen::Index i = 0; i < n_; ++i)
        trip.emplace_back(i, offsets_[g] + f.factors[g].index[static_cast<std::size_t>(i)], 1.0);
    z_.resize(n_, q_);
    z_.setFromTriplets(trip.begin(), trip.end());
    xtx_ = f.X.transpose() * f.X;
    xty_ = f.X.transpose() * f.y;
    if (q_ > 0) {
      ztz_ = Eigen::SparseMatrix<double>(z_.transpose() * z_);
      ztz_.makeCompressed();
      ztx_ = z_.transpose() * f.X;
      zty_ = z_.transpose() * f.y;
      a_ = ztz_;
      base_.assign(ztz_.valuePtr(), ztz_.valuePtr() + ztz_.nonZeros());
      for (Eigen::Index c = 0; c < ztz_.outerSize(); ++c)
        for (Eigen::SparseMatrix<double>::InnerIterator it(ztz_, c); it; ++it) {
          rows_.push_back(it.row());
          cols_.push_back(it.col());
        }
      chol_.analyzePattern(a_);
    }
  }

  [[nodiscard]] std::size_t n_theta() const noexcept { return frame_->factors.size(); }
  [[nodiscard]] Eigen::Index n() const noexcept { return n_; }
  [[nodiscard]] Eigen::Index p() const noexcept { return p_; }
  [[nodiscard]] Eigen::Index q() const noexcept { return q_; }
  [[nodiscard]] Eigen::Index offset(std::size_t g) const { return offsets_.at(g); }
  [[nodiscard]] const ModelFrame& frame() const noexcept { return *frame_; }
  [[nodiscard]] const Eigen::SparseMatrix<double>& z() const noexcept { return z_; }

  [[nodiscard]] State evaluate(std::span<const double> theta) {
    if (theta.size() != n_theta()) throw ConfigError("theta has wrong length");
    State s;
    const auto& f = *frame_;
    Eigen::VectorXd cu;
    Eigen::MatrixXd rzx;
    Eigen::VectorXd lambda(q_);
    if (q_ > 0) {
      for (std::size_t g = 0; g < theta.size(); ++g)
        lambda.segment(offsets_[g], static_cast<Eigen::Index>(f.factors[g].levels.size())).setConstant(theta[g]);
      double* v = a_.valuePtr();
      for (std::size_t k = 0; k < base_.size(); ++k)
        v[k] = base_[k] * lambda(rows_[k]) * lambda(cols_[k]) + (rows_[k] == cols_[k] ? 1.0 : 0.0);
      chol_.factorize(a_);
      if (chol_.info() != Eigen::Success) throw DataError("random-effects system is not positive definite");
      const auto& lmat = chol_.matrixL().nestedExpression();
      s.logdet_l = 2.0 * lmat.diagonal().array().log().sum();
      Eigen::VectorXd rhs = chol_.permutationP() * (lambda.asDiagonal() * zty_);
      cu = chol_.matrixL().solve(rhs);
      Eigen::MatrixXd rhsx = chol_.permutationP() * (lambda.asDiagonal() * ztx_);
      rzx = chol_.matrixL().solve(rhsx);
      s.rxtrx = xtx_ - rzx.transpose() * rzx;
    } else {
      s.rxtrx = xtx_;
    }
    Eigen::LLT<Eigen::MatrixXd> rx(s.rxtrx);
    if (rx.info() != Eigen::Success) throw DataError("fixed-effect design is rank deficient");
    s.logdet_rx = 2.0 * rx.matrixLLT().diagonal().array().log().sum();
    Eigen::VectorXd rhs_beta = q_ > 0 ? Eigen::VectorXd(xty_ - rzx.transpose() * cu) : xty_;
    s.beta = rx.solve(rhs_beta);
    Eigen::VectorXd resid = f.y - f.X * s.beta;
    if (q_ > 0) {
      Eigen::VectorXd w = cu - rzx * s.beta;
      Eigen::VectorXd pu = chol_.matrixU().solve(w);
      Eigen::VectorXd u = chol_.permutationPinv() * pu;
      s.b = lambda.asDiagonal() * u;
      resid -= z_ * s.b;
      s.pwrss = resid.squaredNorm() + u.squaredNorm();
    } else {
      s.b.resize(0);
      s.pwrss = resid.squaredNorm();
    }
    const double dof = static_cast<double>(n_ - p_);
    s.deviance = s.logdet_l + s.logdet_rx + dof * (1.0 + std::log(2.0 * std::numbers::pi * s.pwrss / dof));
    return s;
  }

  [[nodiscard]] double deviance(std::span<const double> theta) { return evaluate(theta).deviance; }

  // -2 REML log-likelihood at explicit variances phi = (sigma2_g..., sigma2_e).
  [[nodiscard]] double deviance_at_variances(std::span<const double> phi) {
    auto s = evaluate(theta_from_variances(phi));
    const double se2 = phi.back();
    const double dof = static_cast<double>(n_ - p_);
    return dof * std::log(2.0 * std::numbers::pi * se2) + s.logdet_l + s.logdet_rx + s.pwrss / se2;
  }

  // Covariance of beta-hat at explicit variances.
  [[nodiscard]] Eigen::MatrixXd beta_covariance_at_variances(std::span<const double> phi) {
    auto s = evaluate(theta_from_variances(phi));
    return phi.back() * s.rxtrx.inverse();
  }

  [[nodiscard]] std::vector<double> theta_from_variances(std::span<const double> phi) const {
    if (phi.size() != n_theta() + 1) throw ConfigError("variance vector has wrong length");
    if (!(phi.back() > 0.0)) throw DataError("residual variance must be positive");
    std::vector<double> th(n_theta());
    for (std::size_t g = 0; g < th.size(); ++g) th[g] = std::sqrt(std::max(phi[g], 0.0) / phi.back());
    return th;
  }

 private:
  const ModelFrame* frame_;
  Eigen::Index n_{0}, p_{0}, q_{0};
  std::vector<Eigen::Index> offsets_;
  Eigen::SparseMatrix<double> z_, ztz_, a_;
  Eigen::MatrixXd xtx_, ztx_;
  Eigen::VectorXd xty_, zty_;
  std::vector<double> base_;
  std::vector<Eigen::Index> rows_, cols_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> chol_;
};

// ---------------------------------------------------------------------------
// Bounded quasi-Newton minimizer

struct FitOptions {
  double rel_tol{1e-8};
  double grad_tol{1e-5};
  int max_iter{200};
  double theta_upper{1e5};
  double singular_tol{1e-4};
  double theta_start{1.0};
  bool satterthwaite{true};
};

struct Convergence {
  bool converged{false};
  bool singular{false};
  int iterations{0};
  int evaluations{0};
  double gradient_norm{0.0};
  double rel_change{0.0};
  std::vector<double> deviance_trace;  // accepted iterates
  std::string message;
};

namespace detail {

struct MinResult {
  std::vector<double> x;
  double f{0.0};
  Convergence conv;
};

// Projected BFGS with Armijo backtracking on a box. The gradient is a
// finite-difference estimate, so its stopping test is taken relative to |f|.
template <class F>
MinResult minimize_box(F&& fn, std::vector<double> x, double lower, double upper, const FitOptions& opt) {
  const std::size_t k = x.size();
  MinResult r;
  auto& c = r.conv;
  auto eval = [&](const std::vector<double>& v) {
    ++c.evaluations;
    return fn(v);
  };
  for (auto& v : x) v = std::clamp(v, lower, upper);
  double f = eval(x);
  c.deviance_trace.push_back(f);
  if (k == 0) {
    r.x = x;
    r.f = f;
    c.converged = true;
    c.message = "no variance parameters";
    return r;
  }

  auto gradient = [&](const std::vector<double>& v, double fv) {
    std::vector<double> g(k);
    for (std::size_t i = 0; i < k; ++i) {
      const double h = 1e-5 * std::max(std::abs(v[i]), 0.1);
      auto a = v, b = v;
      if (v[i] - h >= lower && v[i] + h <= upper) {
        a[i] += h;
        b[i] -= h;
        g[i] = (eval(a) - eval(b)) / (2.0 * h);
      } else if (v[i] + h <= upper) {
        a[i] += h;
        g[i] = (eval(a) - fv) / h;
      } else {
        b[i] -= h;
        g[i] = (fv - eval(b)) / h;
      }
    }
    return g;
  };
  auto free_var = [&](const std::vector<double>& v, const std::vector<double>& g, std::size_t i) {
    if (v[i] <= lower && g[i] > 0.0) return false;
    if (v[i] >= upper && g[i] < 0.0) return false;
    return true;
  };
  auto proj_norm = [&](const std::vector<double>& v, const std::vector<double>& g) {
    double m = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      if (free_var(v, g, i)) m = std::max(m, std::abs(g[i]));
    return m;
  };

  auto g = gradient(x, f);
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  bool h_fresh = true;
  c.gradient_norm = proj_norm(x, g);
  c.rel_change = std::numeric_limits<double>::infinity();

  for (c.iterations = 0; c.iterations < opt.max_iter;) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
    double slope = 0.0;
    for (int attempt = 0; attempt < 2; ++attempt) {
      d.setZero();
      for (std::size_t i = 0; i < k; ++i) {
        if (!free_var(x, g, i)) continue;
        for (std::size_t j = 0; j < k; ++j)
          if (free_var(x, g, j))
            d(static_cast<Eigen::Index>(i)) -= h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * g[j];
      }
      slope = 0.0;
      for (std::size_t i = 0; i < k; ++i) slope += d(static_cast<Eigen::Index>(i)) * g[i];
      if (slope < 0.0) break;
      h.setIdentity();
      h_fresh = true;
    }
    if (!(slope < 0.0)) {
      c.message = "no descent direction";
      break;
    }
    if (h_fresh) {
      // Unit first step in the steepest-descent direction, capped at the box width.
      const double dn = d.norm();
      const double cap = std::max(1.0, *std::max_element(x.begin(), x.end()));
      if (dn > cap) d *= cap / dn;
    }

    double alpha = 1.0;
    std::vector<double> xn(k);
    double fn_new = f;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      double lin = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        xn[i] = std::clamp(x[i] + alpha * d(static_cast<Eigen::Index>(i)), lower, upper);
        lin += g[i] * (xn[i] - x[i]);
      }
      if (xn == x) break;
      fn_new = eval(xn);
      if (std::isfinite(fn_new) && fn_new <= f + 1e-4 * std::min(lin, 0.0) && fn_new <= f) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!h_fresh) {
        h.setIdentity();
        h_fresh = true;
        continue;
      }
      c.message = "line search made no progress";
      break;
    }
    ++c.iterations;
    auto gn = gradient(xn, fn_new);
    Eigen::VectorXd s(static_cast<Eigen::Index>(k)), yv(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) {
      s(static_cast<Eigen::Index>(i)) = xn[i] - x[i];
      yv(static_cast<Eigen::Index>(i)) = gn[i] - g[i];
    }
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (h_fresh) h *= sy / yv.squaredNorm();
      const double rho = 1.0 / sy;
      Eigen::MatrixXd id = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
      h = (id - rho * s * yv.transpose()) * h * (id - rho * yv * s.transpose()) + rho * s * s.transpose();
      h_fresh = false;
    }
    c.rel_change = std::abs(f - fn_new) / std::max(std::abs(fn_new), 1.0);
    x = xn;
    f = fn_new;
    g = gn;
    c.deviance_trace.push_back(f);
    c.gradient_norm = proj_norm(x, g);
    if (c.rel_change < opt.rel_tol && c.gradient_norm < opt.grad_tol) {
      c.converged = true;
      c.message = "relative deviance change and projected gradient below tolerance";
      break;
    }
  }
  // A stalled search at a stationary point is still a solution.
  if (!c.converged && c.gradient_norm < opt.grad_tol * std::max(1.0, std::abs(f)) && c.iterations < opt.max_iter) {
    c.converged = true;
    c.message = "stationary point (" + c.message + ")";
  }
  if (!c.converged && c.message.empty()) c.message = "iteration limit reached";
  r.x = x;
  r.f = f;
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fit result

struct Coefficient {
  std::string name;
  double estimate{0.0};
  double se{0.0};
  std::optional<double> df;  // absent when the Satterthwaite approximation is undefined
  double t{0.0};
  double p{1.0};
  bool normal_approx{false};
};

struct VarianceComponent {
  std::string factor;
  double variance{0.0};
  double vpc{0.0};
  std::size_t levels{0};
  bool boundary{false};
};

struct LevelEffects {
  std::string factor;
  std::vector<std::string> levels;
  std::vector<double> values;
};

struct FitResult {
  std::string model;
  std::string response;
  std::vector<Coefficient> coefficients;
  Eigen::MatrixXd vcov;
  std::vector<double> predictor_means;  // aligned with coefficients; 1 for the intercept
  std::vector<VarianceComponent> random;
  double residual_variance{0.0};
  double fixed_variance{0.0};
  double r2_marginal{0.0};
  double r2_conditional{0.0};
  double reml_deviance{0.0};
  std::vector<double> theta;
  std::vector<LevelEffects> blups;
  std::vector<double> fitted;     // X beta + Z b, in input row order
  std::vector<double> residuals;  // y - fitted
  std::size_t n_obs{0};
  Convergence convergence;

  [[nodiscard]] std::size_t coefficient_index(std::string_view name) const {
    for (std::size_t i = 0; i < coefficients.size(); ++i)
      if (coefficients[i].name == name) return i;
    throw ConfigError("model has no fixed effect '" + std::string(name) + "'");
  }
  [[nodiscard]] const Coefficient& coefficient(std::string_view name) const {
    return coefficients[coefficient_index(name)];
  }
  [[nodiscard]] const LevelEffects& effects(std::string_view factor) const {
    for (const auto& b : blups)
      if (b.factor == factor) return b;
    throw ConfigError("model has no grouping factor '" + std::string(factor) + "'");
  }
  [[nodiscard]] const VarianceComponent& component(std::string_view factor) const {
    for (const auto& v : random)
      if (v.factor == factor) return v;
    throw ConfigError("model has no grouping factor '" + std::string(factor) + "'");
  }
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, FitResult best) : Error(what), best_(std::move(best)) {}
  [[nodiscard]] const FitResult& best() const noexcept { return best_; }

 private:
  FitResult best_;
};

// ---------------------------------------------------------------------------
// Derived quantities

struct R2Vpc {
  double fixed_variance{0.0};
  double r2_marginal{0.0};
  double r2_conditional{0.0};
  std::vector<double> vpc;
};

// Nakagawa-style R2 for a Gaussian model with random intercepts. The fixed
// variance is the sample variance (n - 1) of the linear predictor X beta.
inline R2Vpc r2_and_vpc(std::span<const double> linear_predictor, std::span<const double> group_variances,
                        double residual_variance) {
  R2Vpc r;
  r.fixed_variance = stats::variance(linear_predictor);
  const double sg = std::accumulate(group_variances.begin(), group_variances.end(), 0.0);
  const double total = r.fixed_variance + sg + residual_variance;
  r.r2_marginal = total > 0.0 ? r.fixed_variance / total : 0.0;
  r.r2_conditional = total > 0.0 ? (r.fixed_variance + sg) / total : 0.0;
  const double random_total = sg + residual_variance;
  for (double v : group_variances) r.vpc.push_back(random_total > 0.0 ? v / random_total : 0.0);
  return r;
}

// Satterthwaite degrees of freedom for each fixed effect:
//   df_k = 2 Var(beta_k)^2 / (g_k' A g_k),
// where g_k is the gradient of Var(beta_k) in the variance parameters and A
// is the asymptotic covariance of those parameters, 2 H^-1 with H the Hessian
// of the REML deviance. Both derivatives are central differences.
inline std::vector<std::optional<double>> satterthwaite_df(RemlProblem& prob, std::span<const double> phi) {
  const std::size_t m = phi.size();
  const auto p = static_cast<std::size_t>(prob.p());
  std::vector<std::optional<double>> out(p);
  for (double v : phi)
    if (!(v > 0.0)) return out;

  std::vector<double> h(m);
  for (std::size_t i = 0; i < m; ++i) {
    h[i] = 1e-4 * std::max(phi[i], 1.0);
    if (phi[i] - h[i] <= 0.0) h[i] = phi[i] / 2.0;
  }
  std::vector<double> x(phi.begin(), phi.end());
  auto at = [&](std::size_t i, double di, std::size_t j, double dj) {
    auto y = x;
    y[i] += di;
    y[j] += dj;
    return prob.deviance_at_variances(y);
  };
  const double f0 = prob.deviance_at_variances(x);
  Eigen::MatrixXd hess(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    hess(ii, ii) = (at(i, h[i], i, 0.0) - 2.0 * f0 + at(i, -h[i], i, 0.0)) / (h[i] * h[i]);
    for (std::size_t j = 0; j < i; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double v = (at(i, h[i], j, h[j]) - at(i, h[i], j, -h[j]) - at(i, -h[i], j, h[j]) +
                        at(i, -h[i], j, -h[j])) /
                       (4.0 * h[i] * h[j]);
      hess(ii, jj) = hess(jj, ii) = v;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(hess);
  if (llt.info() != Eigen::Success) return out;
  Eigen::MatrixXd acov = 2.0 * llt.solve(Eigen::MatrixXd::Identity(hess.rows(), hess.cols()));

  Eigen::MatrixXd grad(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    auto up = x, dn = x;
    up[i] += h[i];
    dn[i] -= h[i];
    Eigen::VectorXd vu = prob.beta_covariance_at_variances(up).diagonal();
    Eigen::VectorXd vd = prob.beta_covariance_at_variances(dn).diagonal();
    grad.col(static_cast<Eigen::Index>(i)) = (vu - vd) / (2.0 * h[i]);
  }
  Eigen::VectorXd v0 = prob.beta_covariance_at_variances(x).diagonal();
  for (std::size_t k = 0; k < p; ++k) {
    Eigen::VectorXd gk = grad.row(static_cast<Eigen::Index>(k)).transpose();
    const double var_var = gk.dot(acov * gk);
    const double v = v0(static_cast<Eigen::Index>(k));
    if (var_var > 0.0 && std::isfinite(var_var)) {
      const double df = 2.0 * v * v / var_var;
      if (std::isfinite(df) && df > 0.0) out[k] = df;
    }
  }
  return out;
}

inline double exp_growth(double beta, double horizon_years) { return std::pow(std::exp(beta), horizon_years); }

// ---------------------------------------------------------------------------
// Fitting

namespace detail {

inline FitResult assemble(RemlProblem& prob, const ModelFrame& frame, const std::vector<double>& theta,
                          Convergence conv, const FitOptions& opt) {
  auto s = prob.evaluate(theta);
  const double dof = static_cast<double>(prob.n() - prob.p());
  const double sigma2 = s.pwrss / dof;
  FitResult r;
  r.response = frame.response;
  r.n_obs = static_cast<std::size_t>(prob.n());
  r.theta = theta;
  r.reml_deviance = s.deviance;
  r.residual_variance = sigma2;
  r.vcov = sigma2 * s.rxtrx.inverse();

  std::vector<double> group_var;
  for (std::size_t g = 0; g < theta.size(); ++g) {
    const bool boundary = theta[g] < opt.singular_tol;
    conv.singular = conv.singular || boundary;
    group_var.push_back(theta[g] * theta[g] * sigma2);
    r.random.push_back({frame.factors[g].name, group_var.back(), 0.0, frame.factors[g].levels.size(), boundary});
    LevelEffects le{frame.factors[g].name, frame.factors[g].levels, {}};
    const auto nl = static_cast<Eigen::Index>(frame.factors[g].levels.size());
    le.values.resize(static_cast<std::size_t>(nl));
    for (Eigen::Index l = 0; l < nl; ++l) le.values[static_cast<std::size_t>(l)] = s.b(prob.offset(g) + l);
    r.blups.push_back(std::move(le));
  }

  Eigen::VectorXd eta = frame.X * s.beta;
  Eigen::VectorXd fitted = eta;
  if (prob.q() > 0) fitted += prob.z() * s.b;
  r.fitted.assign(fitted.data(), fitted.data() + fitted.size());
  r.residuals.resize(r.fitted.size());
  for (std::size_t i = 0; i < r.fitted.size(); ++i) r.residuals[i] = frame.y(static_cast<Eigen::Index>(i)) - r.fitted[i];

  const std::vector<double> eta_v(eta.data(), eta.data() + eta.size());
  auto rv = r2_and_vpc(eta_v, group_var, sigma2);
  r.fixed_variance = rv.fixed_variance;
  r.r2_marginal = rv.r2_marginal;
  r.r2_conditional = rv.r2_conditional;
  for (std::size_t g = 0; g < r.random.size(); ++g) r.random[g].vpc = rv.vpc[g];

  std::vector<std::optional<double>> df(static_cast<std::size_t>(prob.p()));
  if (opt.satterthwaite && !conv.singular && conv.converged) {
    std::vector<double> phi = group_var;
    phi.push_back(sigma2);
    df = satterthwaite_df(prob, phi);
  }
  Eigen::VectorXd xbar = frame.X.colwise().mean();
  for (Eigen::Index k = 0; k < prob.p(); ++k) {
    Coefficient c;
    c.name = frame.fixed_names[static_cast<std::size_t>(k)];
    c.estimate = s.beta(k);
    c.se = std::sqrt(std::max(r.vcov(k, k), 0.0));
    c.t = c.se > 0.0 ? c.estimate / c.se : 0.0;
    if (prob.q() == 0) c.df = dof;  // ordinary least squares: exact t
    else c.df = df[static_cast<std::size_t>(k)];
    if (c.df) {
      c.p = stats::t_two_sided_p(c.t, *c.df);
    } else {
      c.p = stats::normal_two_sided_p(c.t);
      c.normal_approx = true;
    }
    r.coefficients.push_back(c);
    r.predictor_means.push_back(xbar(k));
  }
  if (conv.singular && conv.message.find("singular") == std::string::npos) conv.message += "; singular fit";
  r.convergence = std::move(conv);
  return r;
}

}  // namespace detail

// REML fit of a prepared frame. Throws ConvergenceError (carrying the best
// iterate) when the optimizer does not converge.
inline FitResult fit_frame(const ModelFrame& frame, const FitOptions& opt = {}) {
  RemlProblem prob(frame);
  std::vector<double> start(prob.n_theta(), opt.theta_start);
  auto mr = detail::minimize_box([&](const std::vector<double>& th) { return prob.deviance(th); }, start, 0.0,
                                 opt.theta_upper, opt);
  auto fit = detail::assemble(prob, frame, mr.x, std::move(mr.conv), opt);
  if (!fit.convergence.converged)
    throw ConvergenceError("REML optimizer did not converge after " + std::to_string(fit.convergence.iterations) +
                               " iterations: " + fit.convergence.message,
                           std::move(fit));
  return fit;
}

// Fits `spec` on an analysis table. Rows are put into a canonical order
// before fitting so that input permutations cannot change the arithmetic;
// fitted values and residuals are returned in the caller's row order.
inline FitResult fit_reml(const AnalysisTable& table, const ModelSpec& spec, const FitOptions& opt = {}) {
  if (table.empty()) throw DataError("analysis table is empty");
  const std::size_t n = table.size();
  std::vector<const std::vector<std::string>*> keys;
  for (const auto& g : spec.random) keys.push_back(&table.grouping(g));
  std::vector<const std::vector<double>*> nums;
  nums.push_back(&table.numeric(spec.response));
  for (const auto& x : spec.fixed) nums.push_back(&table.numeric(x));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (const auto* k : keys)
      if ((*k)[a] != (*k)[b]) return (*k)[a] < (*k)[b];
    for (const auto* v : nums)
      if ((*v)[a] != (*v)[b]) return (*v)[a] < (*v)[b];
    return false;
  });
  for (const auto* v : nums)
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite((*v)[i])) throw DataError("non-finite value at row " + std::to_string(i + 1));
  AnalysisTable sorted;
  for (std::size_t i : order)
    sorted.push_back(table.user[i], table.category[i], table.time_years[i], table.log_value[i],
                     table.log_activity[i]);
  auto frame = make_frame(sorted, spec);
  auto restore = [&](FitResult& f) {
    f.model = model_name(spec);
    std::vector<double> fit(n), res(n);
    for (std::size_t i = 0; i < n; ++i) {
      fit[order[i]] = f.fitted[i];
      res[order[i]] = f.residuals[i];
    }
    f.fitted = std::move(fit);
    f.residuals = std::move(res);
  };
  try {
    auto f = fit_frame(frame, opt);
    restore(f);
    return f;
  } catch (const ConvergenceError& e) {
    auto best = e.best();
    restore(best);
    throw ConvergenceError(e.what(), std::move(best));
  }
}

// ---------------------------------------------------------------------------
// Ablation: refit without categories whose predicted effect is below a cutoff.

struct AblationResult {
  FitResult original;
  FitResult refit;
  std::vector<std::string> removed_levels;
  std::size_t rows_removed{0};
  double time_shift{0.0};  // refit minus original time coefficient
};

inline AblationResult ablate_and_refit(const FitResult& fit, const AnalysisTable& table, const ModelSpec& spec,
                                       double threshold = -0.5, const FitOptions& opt = {},
                                       std::string_view factor = "category") {
  AblationResult a;
  a.original = fit;
  const auto& eff = fit.effects(factor);
  for (std::size_t l = 0; l < eff.levels.size(); ++l)
    if (eff.values[l] < threshold) a.removed_levels.push_back(eff.levels[l]);
  const auto& col = table.grouping(factor);
  std::vector<bool> keep(table.size(), true);
  for (std::size_t i = 0; i < table.size(); ++i)
    if (std::binary_search(a.removed_levels.begin(), a.removed_levels.end(), col[i])) {
      keep[i] = false;
      ++a.rows_removed;
    }
  auto sub = a.rows_removed == 0 ? table : table.subset(keep);
  for (const auto& g : spec.random) {
    auto labels = sub.grouping(g);
    std::sort(labels.begin(), labels.end());
    const auto levels = static_cast<std::size_t>(std::unique(labels.begin(), labels.end()) - labels.begin());
    if (levels < 2)
      throw DataError("ablation below " + format_double(threshold) + " removed " +
                      std::to_string(a.removed_levels.size()) + " " + std::string(factor) + " levels and " +
                      std::to_string(a.rows_removed) + " of " + std::to_string(table.size()) +
                      " rows, leaving factor '" + g + "' with " + std::to_string(levels) + " level(s)");
  }
  a.refit = fit_reml(sub, spec, opt);
  const std::string time = "time_years";
  if (std::find(spec.fixed.begin(), spec.fixed.end(), time) != spec.fixed.end())
    a.time_shift = a.refit.coefficient(time).estimate - a.original.coefficient(time).estimate;
  return a;
}

}  // namespace bte::lmm
