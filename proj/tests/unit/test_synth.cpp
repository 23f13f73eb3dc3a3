#include <gtest/gtest.h>

#include <random>
#include <set>

#include "bte/pipeline.hpp"
#include "bte/synth.hpp"
#include "oracles.hpp"

using namespace bte;
using synth::SynthConfig;

namespace {

SynthConfig small() {
  SynthConfig c;
  c.n_users = 40;
  c.n_categories = 6;
  c.items_per_category = 110;
  c.seed = 11;
  return c;
}

}  // namespace

TEST(SynthReference, HandPath) {
  std::vector<double> c = {5, 3, 2.5, 1};
  std::vector<std::optional<synth::RefThreshold>> t(4, synth::RefThreshold{4, 2});
  auto ep = synth::reference_episodes(c, t);
  ASSERT_EQ(ep.size(), 1u);
  EXPECT_DOUBLE_EQ(ep[0].value, 5.5);
  EXPECT_EQ(ep[0].open, 0u);
  EXPECT_EQ(ep[0].close, 3u);
}

TEST(SynthReference, AgreesWithBackwardWalkOracle) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(1, 30), kind(0, 9);
  std::uniform_real_distribution<double> val(0.0, 10.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = len(rng);
    std::vector<double> c;
    std::vector<std::optional<synth::RefThreshold>> a;
    std::vector<std::optional<oracle::Band>> b;
    for (int i = 0; i < n; ++i) {
      const int k = kind(rng);
      const double x = val(rng), y = x - val(rng) / 3.0;
      if (k == 0) {
        a.push_back(std::nullopt);
        b.push_back(std::nullopt);
      } else {
        a.push_back(synth::RefThreshold{x, y});
        b.push_back(oracle::Band{x, y});
      }
      c.push_back(k == 9 ? x : val(rng));
    }
    auto ra = synth::reference_episodes(c, a);
    auto rb = oracle::episodes(c, b);
    std::sort(rb.begin(), rb.end(), [](const auto& p, const auto& q) { return p.open < q.open; });
    ASSERT_EQ(ra.size(), rb.size()) << trial;
    for (std::size_t i = 0; i < ra.size(); ++i) {
      EXPECT_EQ(ra[i].open, rb[i].open);
      EXPECT_EQ(ra[i].close, rb[i].close);
      EXPECT_NEAR(ra[i].value, rb[i].value, 1e-12);
    }
  }
}

TEST(SynthRatings, SameSeedSameBytesAnyThreadCount) {
  oracle::TempDir a("sa"), b("sb"), c("sc");
  auto cfg = small();
  synth::generate_ratings(cfg, a.path());
  synth::generate_ratings(cfg, b.path());
  cfg.threads = 3;
  synth::generate_ratings(cfg, c.path());
  for (const char* f : {"ratings.jsonl", "meta.jsonl", "ground_truth.csv", "planted.csv"}) {
    const auto x = io::read_file(a / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, io::read_file(b / f)) << f;
    EXPECT_EQ(x, io::read_file(c / f)) << f;
  }
  auto other = small();
  other.seed = 12;
  oracle::TempDir d("sd");
  synth::generate_ratings(other, d.path());
  EXPECT_NE(io::read_file(a / "ratings.jsonl"), io::read_file(d / "ratings.jsonl"));
}

TEST(SynthRatings, PlantedEpisodesMostlyDetectedAndUsersKept) {
  oracle::TempDir dir("sp");
  auto cfg = small();
  auto corpus = synth::generate_ratings(cfg, dir.path());
  EXPECT_TRUE(corpus.warnings.empty());
  EXPECT_GT(corpus.min_user_ratings, cfg.min_user_ratings);
  ASSERT_EQ(corpus.planted.size(), cfg.n_users);
  std::set<std::string> planted_users;
  for (const auto& t : corpus.truth) {
    EXPECT_GT(t.value, 0.0);
    EXPECT_LT(t.t_x, t.t_y);
    EXPECT_GE(t.activity, 1u);
    if (t.planted) planted_users.insert(t.user_id);
  }
  // Integer rating rounding can push a planted dwell or drop across a band
  // edge; the ground truth records what the ratings actually contain.
  EXPECT_GE(planted_users.size() * 100, cfg.n_users * 85);
  // Every rating line parses and lies in range.
  RatingStream s(dir / "ratings.jsonl", RecordFormat::jsonl, {});
  std::uint64_t n = 0;
  RatingRecord r;
  while (s.next(r)) {
    EXPECT_GE(r.rating, 1.0);
    EXPECT_LE(r.rating, 5.0);
    ++n;
  }
  EXPECT_EQ(n, corpus.ratings);
  EXPECT_EQ(s.stats().malformed, 0u);
}

TEST(SynthRatings, PipelineRecoversGroundTruthExactly) {
  oracle::TempDir dir("spipe");
  auto cfg = small();
  auto corpus = synth::generate_ratings(cfg, dir / "data");
  pipeline::PipelineConfig pc;
  pc.ratings = dir / "data" / "ratings.jsonl";
  pc.meta = dir / "data" / "meta.jsonl";
  pc.out = dir / "out";
  pipeline::run_pipeline(pc, {"relevance", "ingest", "thresholds", "bte"});
  auto events = read_events_csv(dir / "out" / "bte" / "events.csv");
  ASSERT_EQ(events.size(), corpus.truth.size());
  std::map<std::tuple<std::string, std::string, std::int64_t>, const synth::TruthEvent*> truth;
  for (const auto& t : corpus.truth) truth[{t.user_id, t.category, t.t_y.index()}] = &t;
  for (const auto& e : events) {
    auto it = truth.find({e.user_id, e.category, e.t_y.index()});
    ASSERT_NE(it, truth.end()) << e.user_id << " " << e.category << " " << e.t_y.str();
    EXPECT_EQ(e.t_x, it->second->t_x);
    EXPECT_NEAR(e.value, it->second->value, 1e-9);
    EXPECT_EQ(e.activity, it->second->activity);
    EXPECT_DOUBLE_EQ(e.time_years, it->second->time_years);
  }
}

TEST(SynthRatings, ShortUsersAndSmallCategoriesWarn) {
  oracle::TempDir dir("sw");
  auto cfg = small();
  cfg.items_per_category = 50;
  cfg.min_user_ratings = 100000;
  auto corpus = synth::generate_ratings(cfg, dir.path());
  EXPECT_EQ(corpus.warnings.size(), 2u);
}

TEST(SynthRegression, DeterministicAndShaped) {
  SynthConfig cfg;
  cfg.reg_events = 500;
  auto a = synth::generate_regression_data(cfg);
  auto b = synth::generate_regression_data(cfg);
  EXPECT_EQ(a.table.log_value, b.table.log_value);
  EXPECT_EQ(a.table.user, b.table.user);
  EXPECT_EQ(a.table.size(), 500u);
  for (std::size_t i = 0; i < a.table.size(); ++i) {
    EXPECT_GE(a.table.time_years[i], 0.0);
    EXPECT_LE(a.table.time_years[i], cfg.reg_years);
    EXPECT_GE(a.table.log_activity[i], 0.0);  // activity >= 1
  }
  EXPECT_EQ(a.truth.user_effects.size(), cfg.reg_users);
}

TEST(SynthRegression, SingleCategoryRefused) {
  SynthConfig cfg;
  cfg.reg_categories = 1;
  EXPECT_THROW(synth::generate_regression_data(cfg), ConfigError);
  cfg = SynthConfig{};
  cfg.reg_users = 1;
  EXPECT_THROW(synth::generate_regression_data(cfg), ConfigError);
}

TEST(SynthRegression, NoiselessRowsSatisfyModelExactly) {
  SynthConfig cfg;
  cfg.reg_events = 1500;
  cfg.sigma_eps = 0.0;
  auto d = synth::generate_regression_data(cfg);
  const auto& t = d.table;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto u = std::stoul(t.user[i].substr(t.user[i].find_first_of("0123456789")));
    const auto c = std::stoul(t.category[i].substr(t.category[i].find_first_of("0123456789")));
    const double y = cfg.beta0 + cfg.beta1 * t.time_years[i] + cfg.beta2 * t.log_activity[i] +
                     d.truth.user_effects[u] + d.truth.category_effects[c];
    ASSERT_NEAR(t.log_value[i], y, 1e-12);
  }
  auto fit = lmm::fit_reml(t, lmm::ModelSpec::full());
  EXPECT_NEAR(fit.coefficient("time_years").estimate, cfg.beta1, 1e-8);
  EXPECT_NEAR(fit.coefficient("log_activity").estimate, cfg.beta2, 1e-8);
}

TEST(SynthRegression, OutlierCategoriesAreShifted) {
  SynthConfig cfg;
  cfg.outlier_categories = 2;
  auto d = synth::generate_regression_data(cfg);
  ASSERT_EQ(d.truth.outlier_categories.size(), 2u);
  EXPECT_EQ(d.truth.outlier_categories[0], synth::category_name(0));
  cfg.outlier_categories = cfg.reg_categories;
  EXPECT_THROW(synth::generate_regression_data(cfg), ConfigError);
}

TEST(SynthConfig, FromFlatConfig) {
  auto c = FlatConfig::parse("seed = 9\nn_users = 12\ndrift = 0\nsigma_eps = 0.1\n");
  auto s = SynthConfig::from_config(c);
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(s.n_users, 12u);
  EXPECT_EQ(s.drift, 0.0);
  EXPECT_THROW(SynthConfig::from_config(FlatConfig::parse("sead = 9\n")), ConfigError);
  EXPECT_THROW(SynthConfig::from_config(FlatConfig::parse("drift = -1\n")), ConfigError);
  EXPECT_THROW(SynthConfig::from_config(FlatConfig::parse("years = 1\n")), ConfigError);
}
