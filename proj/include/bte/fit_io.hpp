#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "bte/io.hpp"
#include "bte/lmm.hpp"

namespace bte::lmm {

using nlohmann::json;

inline json to_json(const FitResult& f) {
  json j;
  j["model"] = f.model;
  j["response"] = f.response;
  j["n_obs"] = f.n_obs;
  json coefs = json::array();
  for (const auto& c : f.coefficients) {
    json cj = {{"name", c.name}, {"estimate", c.estimate}, {"se", c.se}, {"t", c.t}, {"p", c.p},
               {"normal_approx", c.normal_approx}};
    cj["df"] = c.df ? json(*c.df) : json(nullptr);
    coefs.push_back(cj);
  }
  j["coefficients"] = coefs;
  json vc = json::array();
  for (Eigen::Index r = 0; r < f.vcov.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < f.vcov.cols(); ++c) row.push_back(f.vcov(r, c));
    vc.push_back(row);
  }
  j["vcov"] = vc;
  j["predictor_means"] = f.predictor_means;
  json rnd = json::array();
  for (const auto& v : f.random)
    rnd.push_back({{"factor", v.factor}, {"variance", v.variance}, {"vpc", v.vpc}, {"levels", v.levels},
                   {"boundary", v.boundary}});
  j["random"] = rnd;
  j["residual_variance"] = f.residual_variance;
  j["fixed_variance"] = f.fixed_variance;
  j["r2_marginal"] = f.r2_marginal;
  j["r2_conditional"] = f.r2_conditional;
  j["reml_deviance"] = f.reml_deviance;
  j["theta"] = f.theta;
  json bl = json::array();
  for (const auto& b : f.blups) bl.push_back({{"factor", b.factor}, {"levels", b.levels}, {"values", b.values}});
  j["blups"] = bl;
  j["fitted"] = f.fitted;
  j["residuals"] = f.residuals;
  const auto& c = f.convergence;
  j["convergence"] = {{"converged", c.converged},       {"singular", c.singular},
                      {"iterations", c.iterations},     {"evaluations", c.evaluations},
                      {"gradient_norm", c.gradient_norm}, {"rel_change", c.rel_change},
                      {"deviance_trace", c.deviance_trace}, {"message", c.message}};
  return j;
}

inline FitResult fit_from_json(const json& j) {
  try {
    FitResult f;
    f.model = j.at("model").get<std::string>();
    f.response = j.at("response").get<std::string>();
    f.n_obs = j.at("n_obs").get<std::size_t>();
    for (const auto& cj : j.at("coefficients")) {
      Coefficient c;
      c.name = cj.at("name").get<std::string>();
      c.estimate = cj.at("estimate").get<double>();
      c.se = cj.at("se").get<double>();
      c.t = cj.at("t").get<double>();
      c.p = cj.at("p").get<double>();
      c.normal_approx = cj.at("normal_approx").get<bool>();
      if (!cj.at("df").is_null()) c.df = cj.at("df").get<double>();
      f.coefficients.push_back(c);
    }
    const auto& vc = j.at("vcov");
    const auto p = static_cast<Eigen::Index>(vc.size());
    f.vcov.resize(p, p);
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = 0; c < p; ++c) f.vcov(r, c) = vc.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
    f.predictor_means = j.at("predictor_means").get<std::vector<double>>();
    for (const auto& v : j.at("random"))
      f.random.push_back({v.at("factor").get<std::string>(), v.at("variance").get<double>(), v.at("vpc").get<double>(),
                          v.at("levels").get<std::size_t>(), v.at("boundary").get<bool>()});
    f.residual_variance = j.at("residual_variance").get<double>();
    f.fixed_variance = j.at("fixed_variance").get<double>();
    f.r2_marginal = j.at("r2_marginal").get<double>();
    f.r2_conditional = j.at("r2_conditional").get<double>();
    f.reml_deviance = j.at("reml_deviance").get<double>();
    f.theta = j.at("theta").get<std::vector<double>>();
    for (const auto& b : j.at("blups"))
      f.blups.push_back({b.at("factor").get<std::string>(), b.at("levels").get<std::vector<std::string>>(),
                         b.at("values").get<std::vector<double>>()});
    f.fitted = j.at("fitted").get<std::vector<double>>();
    f.residuals = j.at("residuals").get<std::vector<double>>();
    const auto& c = j.at("convergence");
    f.convergence.converged = c.at("converged").get<bool>();
    f.convergence.singular = c.at("singular").get<bool>();
    f.convergence.iterations = c.at("iterations").get<int>();
    f.convergence.evaluations = c.at("evaluations").get<int>();
    f.convergence.gradient_norm = c.at("gradient_norm").get<double>();
    f.convergence.rel_change = c.at("rel_change").get<double>();
    f.convergence.deviance_trace = c.at("deviance_trace").get<std::vector<double>>();
    f.convergence.message = c.at("message").get<std::string>();
    if (static_cast<std::size_t>(p) != f.coefficients.size()) throw DataError("vcov size does not match coefficients");
    return f;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed fit document: ") + e.what());
  }
}

// A fit file holds either one fit under "fit", or an ablation under
// "original" and "ablated". The primary fit is the original one.
inline FitResult read_fit(const io::fs::path& path) {
  json j = json::parse(io::read_file(path), nullptr, false);
  if (j.is_discarded()) throw DataError("cannot parse fit file " + path.string());
  if (j.contains("fit")) return fit_from_json(j.at("fit"));
  if (j.contains("original")) return fit_from_json(j.at("original"));
  throw DataError(path.string() + ": no fit found");
}

inline json to_json(const AblationResult& a, double threshold) {
  return {{"original", to_json(a.original)},
          {"ablated", to_json(a.refit)},
          {"ablation",
           {{"threshold", threshold},
            {"removed_levels", a.removed_levels},
            {"rows_removed", a.rows_removed},
            {"time_shift", a.time_shift}}}};
}

inline std::string stars(double p) {
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

namespace detail {
inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}
inline std::string with_commas(std::size_t n) {
  auto s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}
inline std::string label(const std::string& name) {
  if (name == "time_years") return "Time (years)";
  if (name == "log_activity") return "Activity-level (Log)";
  if (name == "(Intercept)") return "Intercept";
  return name;
}
inline std::string factor_label(const std::string& f) {
  if (f == "user") return "Unique Users (VPC)";
  if (f == "category") return "Unique categories (VPC)";
  return "Unique " + f + " (VPC)";
}

// Rows of (label, cell) for one fit; intercept last.
inline std::vector<std::pair<std::string, std::string>> table_rows(const FitResult& f) {
  std::vector<std::pair<std::string, std::string>> rows;
  std::vector<const Coefficient*> order;
  for (const auto& c : f.coefficients)
    if (c.name != "(Intercept)") order.push_back(&c);
  for (const auto& c : f.coefficients)
    if (c.name == "(Intercept)") order.push_back(&c);
  for (const auto* c : order) {
    rows.emplace_back(label(c->name), fmt("%.3f", c->estimate) + stars(c->p) + (c->normal_approx ? " (z)" : ""));
    rows.emplace_back("", "(" + fmt("%.3f", c->se) + ")");
  }
  rows.emplace_back("-", "");
  for (const auto& v : f.random) rows.emplace_back(factor_label(v.factor), with_commas(v.levels) + " (" + fmt("%.2f", v.vpc) + ")");
  rows.emplace_back("Observations", with_commas(f.n_obs));
  rows.emplace_back("-", "");
  rows.emplace_back("Marginal R2", fmt("%.2f", f.r2_marginal));
  rows.emplace_back("Conditional R2", fmt("%.2f", f.r2_conditional));
  return rows;
}
}  // namespace detail

// Plain-text regression table: coefficients with SEs and significance stars,
// group counts with VPCs, observations, marginal and conditional R2.
inline std::string format_table(const std::vector<const FitResult*>& fits, const std::vector<std::string>& headers) {
  std::vector<std::vector<std::pair<std::string, std::string>>> cols;
  for (const auto* f : fits) cols.push_back(detail::table_rows(*f));
  std::size_t lw = 24, cw = 22;
  for (const auto& c : cols)
    for (const auto& [l, v] : c) {
      lw = std::max(lw, l.size() + 2);
      cw = std::max(cw, v.size() + 2);
    }
  const std::size_t width = lw + cw * cols.size();
  auto pad = [](std::string s, std::size_t w, bool right) {
    if (s.size() >= w) return s;
    return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
  };
  std::string out = std::string(width, '=') + "\n";
  out += pad("", lw, false);
  for (const auto& h : headers) out += pad(h, cw, true);
  out += "\n" + pad("", lw, false);
  for (std::size_t i = 0; i < cols.size(); ++i) out += pad("Barrier-to-Exit (log)", cw, true);
  out += "\n" + std::string(width, '-') + "\n";
  for (std::size_t r = 0; r < cols.front().size(); ++r) {
    if (cols.front()[r].first == "-") {
      out += std::string(width, '-') + "\n";
      continue;
    }
    out += pad(cols.front()[r].first, lw, false);
    for (const auto& c : cols) out += pad(r < c.size() ? c[r].second : "", cw, true);
    out += "\n";
  }
  out += std::string(width, '=') + "\n";
  out += "Note: *p<0.1; **p<0.05; ***p<0.01";
  bool any_z = false, any_singular = false;
  for (const auto* f : fits) {
    any_singular = any_singular || f->convergence.singular;
    for (const auto& c : f->coefficients) any_z = any_z || c.normal_approx;
  }
  if (any_z) out += "; (z) normal approximation, Satterthwaite df undefined";
  if (any_singular) out += "; singular fit (variance component at 0)";
  out += "\n";
  return out;
}

inline std::string format_table(const FitResult& f) { return format_table({&f}, {"(1)"}); }

}  // namespace bte::lmm
