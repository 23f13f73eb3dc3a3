#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bte/common.hpp"
#include "bte/config.hpp"
#include "bte/events.hpp"
#include "bte/io.hpp"

namespace bte::synth {

// Everything a synthetic corpus depends on. Ratings generator: each user has
// a few steady background categories and one planted preference-change
// episode (warm-up, spike, dwell, drop) in another category. The whole user
// is scaled by exp(drift * t), which plants a BtE growth rate of `drift` per
// year. Regression generator: draws rows straight from the crossed
// random-intercepts model.
struct SynthConfig {
  std::uint64_t seed{1};

  // ratings corpus
  std::size_t n_users{600};
  std::size_t n_categories{12};
  std::size_t items_per_category{150};
  int start_year{1998};
  int years{21};
  std::size_t background_categories{3};
  std::size_t background_ratings{6};  // per background category per quarter
  double background_mean{2.5};
  std::size_t warmup_quarters{3};
  std::size_t warmup_ratings{5};
  double warmup_mean{2.4};
  std::size_t spike_ratings_min{12};
  std::size_t spike_ratings_max{14};
  double spike_mean{2.4};
  std::size_t dwell_min{1};
  std::size_t dwell_max{4};
  std::size_t dwell_ratings{5};
  double dwell_mean{2.4};
  std::size_t drop_ratings{2};
  double drift{0.018};           // per-year log growth of the user scale
  double user_sigma{0.08};       // lognormal user scale
  double category_sigma{0.05};   // lognormal scale of the episode path
  std::size_t min_user_ratings{20};
  // reference thresholds used for the ground truth
  int truth_window{8};
  std::size_t truth_min_points{2};
  double truth_sigma_mult{2.0};

  // regression generator
  std::size_t reg_events{3000};
  std::size_t reg_users{300};
  std::size_t reg_categories{30};
  double reg_years{20.0};
  double beta0{0.300};
  double beta1{0.018};
  double beta2{0.613};
  double sigma_user{0.5};
  double sigma_category{0.6};
  double sigma_eps{0.4};
  double activity_p{0.25};  // activity = 1 + Geometric(p)
  std::size_t outlier_categories{0};
  double outlier_shift{-2.0};

  unsigned threads{1};

  void validate() const {
    auto pos = [](std::size_t v, const char* name) {
      if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
    };
    pos(n_users, "n_users");
    pos(items_per_category, "items_per_category");
    pos(background_ratings, "background_ratings");
    pos(warmup_ratings, "warmup_ratings");
    pos(dwell_ratings, "dwell_ratings");
    pos(drop_ratings, "drop_ratings");
    pos(spike_ratings_min, "spike_ratings_min");
    pos(dwell_min, "dwell_min");
    pos(reg_events, "reg_events");
    if (n_categories < background_categories + 1)
      throw ConfigError("n_categories must exceed background_categories");
    if (spike_ratings_max < spike_ratings_min) throw ConfigError("spike_ratings_max < spike_ratings_min");
    if (dwell_max < dwell_min) throw ConfigError("dwell_max < dwell_min");
    if (warmup_quarters < 2) throw ConfigError("warmup_quarters must be >= 2");
    if (years < 1) throw ConfigError("years must be >= 1");
    const auto span = static_cast<std::size_t>(years) * 4;
    if (warmup_quarters + 1 + dwell_max + 1 > span) throw ConfigError("years too short for one episode");
    if (drift < 0.0) throw ConfigError("drift must be >= 0");
    if (user_sigma < 0.0 || category_sigma < 0.0) throw ConfigError("scale sigmas must be >= 0");
    for (double m : {background_mean, warmup_mean, spike_mean, dwell_mean})
      if (!(m >= 1.0 && m <= 5.0)) throw ConfigError("mean ratings must lie in [1, 5]");
    if (reg_users < 2) throw ConfigError("reg_users must be >= 2 (grouping needs two levels)");
    if (reg_categories < 2) throw ConfigError("reg_categories must be >= 2 (grouping needs two levels)");
    if (outlier_categories >= reg_categories) throw ConfigError("outlier_categories must be < reg_categories");
    if (sigma_user < 0.0 || sigma_category < 0.0 || sigma_eps < 0.0) throw ConfigError("sigmas must be >= 0");
    if (!(activity_p > 0.0 && activity_p <= 1.0)) throw ConfigError("activity_p must be in (0, 1]");
    if (!(reg_years > 0.0)) throw ConfigError("reg_years must be > 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }

  static constexpr std::string_view kKeys[] = {
      "seed", "n_users", "n_categories", "items_per_category", "start_year", "years", "background_categories",
      "background_ratings", "background_mean", "warmup_quarters", "warmup_ratings", "warmup_mean",
      "spike_ratings_min", "spike_ratings_max", "spike_mean", "dwell_min", "dwell_max", "dwell_ratings",
      "dwell_mean", "drop_ratings", "drift", "user_sigma", "category_sigma", "min_user_ratings", "truth_window",
      "truth_min_points", "truth_sigma_mult", "reg_events", "reg_users", "reg_categories", "reg_years", "beta0",
      "beta1", "beta2", "sigma_user", "sigma_category", "sigma_eps", "activity_p", "outlier_categories",
      "outlier_shift", "threads"};

  static SynthConfig from_config(const FlatConfig& c) {
    c.require_known(kKeys);
    SynthConfig s;
    auto u = [&](std::string_view k, std::size_t& v) { v = c.get_uint(k, v); };
    auto d = [&](std::string_view k, double& v) { v = c.get_double(k, v); };
    s.seed = c.get_uint("seed", s.seed);
    u("n_users", s.n_users);
    u("n_categories", s.n_categories);
    u("items_per_category", s.items_per_category);
    s.start_year = static_cast<int>(c.get_int("start_year", s.start_year));
    s.years = static_cast<int>(c.get_int("years", s.years));
    u("background_categories", s.background_categories);
    u("background_ratings", s.background_ratings);
    d("background_mean", s.background_mean);
    u("warmup_quarters", s.warmup_quarters);
    u("warmup_ratings", s.warmup_ratings);
    d("warmup_mean", s.warmup_mean);
    u("spike_ratings_min", s.spike_ratings_min);
    u("spike_ratings_max", s.spike_ratings_max);
    d("spike_mean", s.spike_mean);
    u("dwell_min", s.dwell_min);
    u("dwell_max", s.dwell_max);
    u("dwell_ratings", s.dwell_ratings);
    d("dwell_mean", s.dwell_mean);
    u("drop_ratings", s.drop_ratings);
    d("drift", s.drift);
    d("user_sigma", s.user_sigma);
    d("category_sigma", s.category_sigma);
    u("min_user_ratings", s.min_user_ratings);
    s.truth_window = static_cast<int>(c.get_int("truth_window", s.truth_window));
    u("truth_min_points", s.truth_min_points);
    d("truth_sigma_mult", s.truth_sigma_mult);
    u("reg_events", s.reg_events);
    u("reg_users", s.reg_users);
    u("reg_categories", s.reg_categories);
    d("reg_years", s.reg_years);
    d("beta0", s.beta0);
    d("beta1", s.beta1);
    d("beta2", s.beta2);
    d("sigma_user", s.sigma_user);
    d("sigma_category", s.sigma_category);
    d("sigma_eps", s.sigma_eps);
    d("activity_p", s.activity_p);
    u("outlier_categories", s.outlier_categories);
    d("outlier_shift", s.outlier_shift);
    s.threads = static_cast<unsigned>(c.get_uint("threads", s.threads));
    s.validate();
    return s;
  }
};

// splitmix64: derives independent per-user streams from one seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::string category_name(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cat%03zu", c);
  return buf;
}
inline std::string item_name(std::size_t c, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "cat%03zu-%05zu", c, i);
  return buf;
}
inline std::string user_name(std::size_t u) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "u%06zu", u);
  return buf;
}

// ---------------------------------------------------------------------------
// Brute-force reference. Deliberately written without the pipeline's scan:
// every (above, below) pair is checked directly.

struct RefThreshold {
  double upper{0.0};
  double lower{0.0};
};

struct RefEpisode {
  std::size_t open{0};
  std::size_t close{0};
  double value{0.0};

  friend bool operator==(const RefEpisode&, const RefEpisode&) = default;
};

// Pair (i, j) is an episode when c_i is above its threshold, c_j is below,
// every thresholded point strictly between them lies strictly inside the
// band or on a threshold, and at least one lies strictly inside. Points
// without a threshold are transparent.
inline std::vector<RefEpisode> reference_episodes(std::span<const double> c,
                                                  std::span<const std::optional<RefThreshold>> thr) {
  std::vector<RefEpisode> out;
  const std::size_t n = c.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!thr[i] || !(c[i] > thr[i]->upper)) continue;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!thr[j] || !(c[j] < thr[j]->lower)) continue;
      bool ok = true;
      std::size_t inside = 0;
      double value = 0.0;
      for (std::size_t k = i + 1; k < j && ok; ++k) {
        if (!thr[k]) continue;
        if (c[k] > thr[k]->upper || c[k] < thr[k]->lower) ok = false;
        else if (c[k] > thr[k]->lower && c[k] < thr[k]->upper) {
          ++inside;
          value += c[k];
        }
      }
      if (ok && inside > 0) out.push_back({i, j, value});
    }
  }
  return out;
}

// Category-averaged band at every quarter in `quarters`, from per-category
// points keyed by quarter index.
inline std::map<std::int64_t, RefThreshold> reference_thresholds(
    const std::map<std::string, std::map<std::int64_t, double>>& by_category, int window, std::size_t min_points,
    double mult) {
  std::vector<std::int64_t> quarters;
  for (const auto& [_, pts] : by_category)
    for (const auto& [q, _c] : pts) quarters.push_back(q);
  std::sort(quarters.begin(), quarters.end());
  quarters.erase(std::unique(quarters.begin(), quarters.end()), quarters.end());
  std::map<std::int64_t, RefThreshold> out;
  for (auto t : quarters) {
    double sx = 0.0, sy = 0.0;
    int used = 0;
    for (const auto& [_, pts] : by_category) {
      std::vector<double> w;
      for (const auto& [q, c] : pts)
        if (q > t - window && q <= t) w.push_back(c);
      if (w.size() < min_points) continue;
      double mean = 0.0;
      for (double v : w) mean += v;
      mean /= static_cast<double>(w.size());
      double ss = 0.0;
      for (double v : w) ss += (v - mean) * (v - mean);
      const double sd = std::sqrt(ss / static_cast<double>(w.size() - 1));
      sx += mean + mult * sd;
      sy += mean - mult * sd;
      ++used;
    }
    if (used > 0) out[t] = {sx / used, sy / used};
  }
  return out;
}

struct TruthEvent {
  std::string user_id;
  std::string category;
  Quarter t_x;
  Quarter t_y;
  double value{0.0};
  std::uint64_t activity{0};
  double time_years{0.0};
  bool planted{false};
};

struct PlantedEpisode {
  std::string user_id;
  std::string category;
  Quarter spike;
  Quarter drop;
  std::size_t dwell{0};
  double scale{1.0};
};

struct RatingsCorpus {
  std::vector<TruthEvent> truth;
  std::vector<PlantedEpisode> planted;
  std::uint64_t ratings{0};
  std::uint64_t items{0};
  std::uint64_t min_user_ratings{0};
  std::vector<std::string> warnings;
};

namespace detail {

struct UserOutput {
  std::string lines;
  std::vector<TruthEvent> truth;
  PlantedEpisode planted;
  std::uint64_t ratings{0};
};

// Integer ratings in [1, 5] whose sum is a randomized rounding of `target`.
inline std::vector<int> round_ratings(std::size_t k, double target, std::mt19937_64& rng) {
  const double lo = static_cast<double>(k), hi = 5.0 * static_cast<double>(k);
  target = std::clamp(target, lo, hi);
  auto total = static_cast<std::int64_t>(std::floor(target));
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < target - std::floor(target)) ++total;
  total = std::clamp<std::int64_t>(total, static_cast<std::int64_t>(k), 5 * static_cast<std::int64_t>(k));
  std::vector<int> r(k, static_cast<int>(total / static_cast<std::int64_t>(k)));
  auto extra = static_cast<std::size_t>(total % static_cast<std::int64_t>(k));
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t e = 0; e < extra; ++e) ++r[idx[e]];
  return r;
}

inline UserOutput generate_user(const SynthConfig& cfg, std::size_t u) {
  std::mt19937_64 rng(split_seed(cfg.seed, u));
  UserOutput out;
  const std::string uid = user_name(u);
  const Quarter first(cfg.start_year, 1);
  const std::int64_t span = static_cast<std::int64_t>(cfg.years) * 4;

  // Category draw: background set plus a distinct episode category.
  std::vector<std::size_t> cats(cfg.n_categories);
  std::iota(cats.begin(), cats.end(), 0);
  std::shuffle(cats.begin(), cats.end(), rng);
  const std::size_t episode_cat = cats[cfg.background_categories];
  cats.resize(cfg.background_categories);

  const auto dwell = std::uniform_int_distribution<std::size_t>(cfg.dwell_min, cfg.dwell_max)(rng);
  const auto w = static_cast<std::int64_t>(cfg.warmup_quarters);
  const auto d = static_cast<std::int64_t>(dwell);
  // Spike quarter offset so that warm-up and drop stay inside the span.
  const std::int64_t latest = span - 1 - d - 1;
  const auto spike_off = std::uniform_int_distribution<std::int64_t>(w, latest)(rng);
  const std::int64_t begin = first.index() + spike_off - w;
  const std::int64_t spike = first.index() + spike_off;
  const std::int64_t drop = spike + d + 1;
  const double t_mid = (0.5 * static_cast<double>(spike + drop) - static_cast<double>(kDatasetOrigin.index())) / 4.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double user_scale = std::exp(cfg.user_sigma * normal(rng));
  const double cat_scale = std::exp(cfg.category_sigma * normal(rng));
  const double g = std::exp(cfg.drift * t_mid) * user_scale;
  out.planted = {uid, category_name(episode_cat), Quarter::from_index(spike), Quarter::from_index(drop), dwell, g};

  // Items are drawn without replacement per category until the pool runs out.
  std::map<std::size_t, std::vector<std::size_t>> pools;
  std::map<std::size_t, std::size_t> pool_pos;
  auto next_item = [&](std::size_t c) {
    auto& pool = pools[c];
    auto& pos = pool_pos[c];
    if (pool.empty() || pos == pool.size()) {
      pool.resize(cfg.items_per_category);
      std::iota(pool.begin(), pool.end(), 0);
      std::shuffle(pool.begin(), pool.end(), rng);
      pos = 0;
    }
    return pool[pos++];
  };

  std::map<std::string, std::map<std::int64_t, double>> c_by_cat;  // truth bookkeeping
  std::map<std::int64_t, std::uint64_t> activity;
  auto emit = [&](std::size_t c, std::int64_t q, std::size_t k, double mean, double scale) {
    if (k == 0) return;
    auto ratings = round_ratings(k, static_cast<double>(k) * mean * scale, rng);
    const Quarter qq = Quarter::from_index(q);
    const std::int64_t t0 = qq.start_unix();
    const std::int64_t t1 = Quarter::from_index(q + 1).start_unix();
    std::uniform_int_distribution<std::int64_t> when(t0, t1 - 1);
    double sum = 0.0;
    for (int r : ratings) {
      nlohmann::json j = {{"user", uid}, {"item", item_name(c, next_item(c))}, {"rating", r}, {"time", when(rng)}};
      out.lines += j.dump();
      out.lines += '\n';
      sum += r;
    }
    c_by_cat[category_name(c)][q] += sum;
    activity[q] += ratings.size();
    out.ratings += ratings.size();
  };
  auto drop_rating = [&](std::size_t c, std::int64_t q, std::size_t k) {
    const Quarter qq = Quarter::from_index(q);
    std::uniform_int_distribution<std::int64_t> when(qq.start_unix(), Quarter::from_index(q + 1).start_unix() - 1);
    for (std::size_t i = 0; i < k; ++i) {
      nlohmann::json j = {{"user", uid}, {"item", item_name(c, next_item(c))}, {"rating", 1}, {"time", when(rng)}};
      out.lines += j.dump();
      out.lines += '\n';
    }
    c_by_cat[category_name(c)][q] += static_cast<double>(k);
    activity[q] += k;
    out.ratings += k;
  };

  for (std::int64_t q = begin; q <= drop; ++q) {
    for (std::size_t c : cats) emit(c, q, cfg.background_ratings, cfg.background_mean, g);
    if (q < spike) {
      emit(episode_cat, q, cfg.warmup_ratings, cfg.warmup_mean, g * cat_scale);
    } else if (q == spike) {
      const auto k = std::uniform_int_distribution<std::size_t>(cfg.spike_ratings_min, cfg.spike_ratings_max)(rng);
      emit(episode_cat, q, k, cfg.spike_mean, g * cat_scale);
    } else if (q < drop) {
      emit(episode_cat, q, cfg.dwell_ratings, cfg.dwell_mean, g * cat_scale);
    } else {
      drop_rating(episode_cat, q, cfg.drop_ratings);
    }
  }

  // Ground truth from the generated ratings. Items are single-tagged, so
  // each rating counts fully toward its own category.
  auto thr = reference_thresholds(c_by_cat, cfg.truth_window, cfg.truth_min_points, cfg.truth_sigma_mult);
  for (const auto& [cat, pts] : c_by_cat) {
    std::vector<std::int64_t> qs;
    std::vector<double> c;
    std::vector<std::optional<RefThreshold>> t;
    for (const auto& [q, v] : pts) {
      qs.push_back(q);
      c.push_back(v);
      auto it = thr.find(q);
      t.push_back(it == thr.end() ? std::nullopt : std::optional<RefThreshold>(it->second));
    }
    for (const auto& ep : reference_episodes(c, t)) {
      TruthEvent e;
      e.user_id = uid;
      e.category = cat;
      e.t_x = Quarter::from_index(qs[ep.open]);
      e.t_y = Quarter::from_index(qs[ep.close]);
      e.value = ep.value;
      for (const auto& [q, n] : activity)
        if (q > qs[ep.open] && q <= qs[ep.close]) e.activity += n;
      e.time_years =
          (0.5 * static_cast<double>(qs[ep.open] + qs[ep.close]) - static_cast<double>(kDatasetOrigin.index())) /
          4.0;
      e.planted = cat == out.planted.category && qs[ep.open] == spike && qs[ep.close] == drop;
      out.truth.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace detail

// Writes `ratings.jsonl`, `meta.jsonl`, `ground_truth.csv` and `planted.csv`
// into `dir`. Users are generated in parallel blocks with per-user seeds and
// written in user order, so output does not depend on the thread count.
inline RatingsCorpus generate_ratings(const SynthConfig& cfg, const io::fs::path& dir) {
  cfg.validate();
  io::fs::create_directories(dir);
  RatingsCorpus corpus;
  corpus.min_user_ratings = std::numeric_limits<std::uint64_t>::max();
  {
    std::ofstream meta(dir / "meta.jsonl", std::ios::binary);
    for (std::size_t c = 0; c < cfg.n_categories; ++c)
      for (std::size_t i = 0; i < cfg.items_per_category; ++i) {
        nlohmann::json j = {{"item", item_name(c, i)}, {"categories", {category_name(c)}}};
        meta << j.dump() << '\n';
        ++corpus.items;
      }
    if (!meta) throw DataError("cannot write " + (dir / "meta.jsonl").string());
  }
  std::ofstream ratings(dir / "ratings.jsonl", std::ios::binary);
  const std::size_t block = std::max<std::size_t>(cfg.threads * 16, 16);
  std::size_t short_users = 0;
  for (std::size_t b = 0; b < cfg.n_users; b += block) {
    const std::size_t e = std::min(cfg.n_users, b + block);
    std::vector<detail::UserOutput> outs(e - b);
    if (cfg.threads <= 1) {
      for (std::size_t u = b; u < e; ++u) outs[u - b] = detail::generate_user(cfg, u);
    } else {
      std::vector<std::future<void>> futs;
      for (unsigned t = 0; t < cfg.threads; ++t)
        futs.push_back(std::async(std::launch::async, [&, t] {
          for (std::size_t u = b + t; u < e; u += cfg.threads) outs[u - b] = detail::generate_user(cfg, u);
        }));
      for (auto& f : futs) f.get();
    }
    for (auto& o : outs) {
      ratings << o.lines;
      corpus.ratings += o.ratings;
      corpus.min_user_ratings = std::min(corpus.min_user_ratings, o.ratings);
      if (o.ratings <= cfg.min_user_ratings) ++short_users;
      corpus.truth.insert(corpus.truth.end(), o.truth.begin(), o.truth.end());
      corpus.planted.push_back(o.planted);
    }
  }
  if (!ratings) throw DataError("cannot write " + (dir / "ratings.jsonl").string());
  ratings.close();
  if (short_users > 0)
    corpus.warnings.push_back(std::to_string(short_users) + " of " + std::to_string(cfg.n_users) +
                              " users have <= " + std::to_string(cfg.min_user_ratings) +
                              " ratings and will be removed by the user filter");
  if (cfg.items_per_category <= 100)
    corpus.warnings.push_back("items_per_category <= 100: every category falls to the category-size filter");

  io::CsvWriter gt(dir / "ground_truth.csv",
                   {"user_id", "category", "t_x", "t_y", "value", "activity", "time_years", "planted"});
  for (const auto& t : corpus.truth)
    gt.field(t.user_id)
        .field(t.category)
        .field(t.t_x.str())
        .field(t.t_y.str())
        .field(t.value)
        .field(t.activity)
        .field(t.time_years)
        .field(t.planted ? 1 : 0)
        .end_row();
  gt.close();
  io::CsvWriter pl(dir / "planted.csv", {"user_id", "category", "spike", "drop", "dwell", "scale"});
  for (const auto& p : corpus.planted)
    pl.field(p.user_id).field(p.category).field(p.spike.str()).field(p.drop.str()).field(p.dwell).field(p.scale).end_row();
  pl.close();
  return corpus;
}

// ---------------------------------------------------------------------------
// Regression-level generator

struct RegressionTruth {
  std::array<double, 3> beta{};
  double sigma_user{0.0};
  double sigma_category{0.0};
  double sigma_eps{0.0};
  std::vector<double> user_effects;
  std::vector<double> category_effects;
  std::vector<std::string> outlier_categories;
};

struct RegressionData {
  AnalysisTable table;
  RegressionTruth truth;
};

// log_value = b0 + b1 * time + b2 * log_activity + u_user + v_category + e.
// Time is skewed toward later years (density proportional to t); activity is
// 1 + Geometric(p). The first `outlier_categories` categories get an extra
// `outlier_shift` on their intercept.
inline RegressionData generate_regression_data(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(split_seed(cfg.seed, 0xA11CE));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::geometric_distribution<int> geom(cfg.activity_p);
  std::uniform_int_distribution<std::size_t> pick_user(0, cfg.reg_users - 1), pick_cat(0, cfg.reg_categories - 1);

  RegressionData d;
  auto& tr = d.truth;
  tr.beta = {cfg.beta0, cfg.beta1, cfg.beta2};
  tr.sigma_user = cfg.sigma_user;
  tr.sigma_category = cfg.sigma_category;
  tr.sigma_eps = cfg.sigma_eps;
  for (std::size_t u = 0; u < cfg.reg_users; ++u) tr.user_effects.push_back(cfg.sigma_user * normal(rng));
  for (std::size_t c = 0; c < cfg.reg_categories; ++c) {
    double v = cfg.sigma_category * normal(rng);
    if (c < cfg.outlier_categories) {
      v += cfg.outlier_shift;
      tr.outlier_categories.push_back(category_name(c));
    }
    tr.category_effects.push_back(v);
  }
  for (std::size_t i = 0; i < cfg.reg_events; ++i) {
    const auto u = pick_user(rng);
    const auto c = pick_cat(rng);
    const double t = cfg.reg_years * std::sqrt(unif(rng));
    const double la = std::log(1.0 + geom(rng));
    const double y = cfg.beta0 + cfg.beta1 * t + cfg.beta2 * la + tr.user_effects[u] + tr.category_effects[c] +
                     cfg.sigma_eps * normal(rng);
    d.table.push_back(user_name(u), category_name(c), t, y, la);
  }
  return d;
}

}  // namespace bte::synth
