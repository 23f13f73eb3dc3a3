// bte: command-line front end for the Barrier-to-Exit toolkit.
//
// Exit status: 0 success, 2 configuration error, 3 data error,
// 4 model did not converge.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bte/bte.hpp"

namespace {

using namespace bte;
namespace fs = io::fs;
using nlohmann::json;

struct Globals {
  std::string config;
  std::string out;
  unsigned threads{0};
};

pipeline::PipelineConfig load_config(const Globals& g) {
  pipeline::PipelineConfig cfg;
  if (!g.config.empty()) {
    const fs::path p(g.config);
    cfg = pipeline::PipelineConfig::from_config(FlatConfig::load(p), p.parent_path());
  }
  if (g.threads > 0) cfg.ingest.threads = g.threads;
  if (!g.out.empty()) cfg.out = g.out;
  return cfg;
}

void print_outcome(const pipeline::StageOutcome& o) {
  std::printf("%-10s %s  %s\n", o.name.c_str(), o.cached ? "cached  " : "computed",
              o.manifest.value("counts", json::object()).dump().c_str());
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Barrier-to-Exit: preference-change extraction and mixed-model analysis"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--config", g.config, "flat key = value config file");
  app.add_option("--out", g.out, "output directory (or file, for fit)");
  app.add_option("--threads", g.threads, "worker threads for shard-parallel stages");

  // relevance
  auto* relevance = app.add_subcommand("relevance", "category co-occurrence relevance scores");
  std::string rel_meta;
  std::optional<std::uint64_t> rel_min_books;
  relevance->add_option("--meta", rel_meta, "item metadata (jsonl, may be gzipped)");
  relevance->add_option("--min-category-books", rel_min_books, "keep categories with more than N items");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "filter ratings and aggregate per user, category and quarter");
  std::string ing_ratings, ing_meta, ing_relevance, ing_format;
  std::optional<std::uint64_t> ing_min_user, ing_partition;
  ingest->add_option("--ratings", ing_ratings, "ratings file (jsonl or csv, may be gzipped)");
  ingest->add_option("--meta", ing_meta, "item metadata; relevance is computed on the fly");
  ingest->add_option("--relevance", ing_relevance, "directory written by the relevance stage");
  ingest->add_option("--format", ing_format, "jsonl or csv");
  ingest->add_option("--min-user-ratings", ing_min_user, "keep users with more than N ratings");
  ingest->add_option("--partition-records", ing_partition, "spill partition size in records");

  // thresholds
  auto* thresholds = app.add_subcommand("thresholds", "rolling interaction thresholds");
  std::string thr_pref;
  std::optional<int> thr_window;
  std::optional<std::size_t> thr_min_points;
  std::optional<double> thr_sigma;
  thresholds->add_option("--preference", thr_pref, "preference.bin or the ingest directory");
  thresholds->add_option("--window", thr_window, "window length v in quarters");
  thresholds->add_option("--min-points", thr_min_points, "minimum points per category window");
  thresholds->add_option("--sigma-mult", thr_sigma, "band half-width in standard deviations");

  // bte
  auto* bte_cmd = app.add_subcommand("bte", "extract Barrier-to-Exit events");
  std::string bte_ingest, bte_thresholds, bte_anchor, bte_origin;
  bte_cmd->add_option("--ingest", bte_ingest, "ingest output directory");
  bte_cmd->add_option("--thresholds", bte_thresholds, "thresholds.csv");
  bte_cmd->add_option("--anchor", bte_anchor, "event time anchor: midpoint or closing");
  bte_cmd->add_option("--origin", bte_origin, "time origin quarter, e.g. 1998Q1");

  // fit
  auto* fit = app.add_subcommand("fit", "fit the crossed random-intercepts model by REML");
  std::string fit_events, fit_model;
  std::optional<double> fit_ablate;
  fit->add_option("--events", fit_events, "events.csv or an analysis table")->required();
  fit->add_option("--model", fit_model, "full or no-activity");
  fit->add_option("--ablate-below", fit_ablate, "also refit without categories whose effect is below this");

  // report
  auto* rep = app.add_subcommand("report", "diagnostic tables for a fit");
  std::string rep_fit, rep_events;
  rep->add_option("--fit", rep_fit, "fit.json")->required();
  rep->add_option("--events", rep_events, "the table the fit was run on")->required();

  // synth
  auto* syn = app.add_subcommand("synth", "synthetic corpus with known ground truth");
  std::string syn_config;
  bool syn_regression = false;
  syn->add_option("--config", syn_config, "synthetic corpus config (flat key = value)");
  syn->add_flag("--regression", syn_regression, "also write a regression-level table");

  // run
  auto* run = app.add_subcommand("run", "run pipeline stages with caching");
  std::vector<std::string> run_stages;
  bool run_force = false;
  run->add_option("--stages", run_stages, "subset of stages (default: all)")->delimiter(',');
  run->add_flag("--force", run_force, "ignore cached results");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*syn) {
      synth::SynthConfig sc;
      if (!syn_config.empty()) sc = synth::SynthConfig::from_config(FlatConfig::load(syn_config));
      if (g.threads > 0) sc.threads = g.threads;
      if (g.out.empty()) throw ConfigError("synth needs --out DIR");
      auto corpus = synth::generate_ratings(sc, g.out);
      for (const auto& w : corpus.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::size_t planted = 0;
      for (const auto& t : corpus.truth) planted += t.planted ? 1 : 0;
      if (syn_regression) write_analysis_csv(synth::generate_regression_data(sc).table, fs::path(g.out) / "regression.csv");
      std::printf("ratings %llu  items %llu  truth events %zu (planted %zu)\n",
                  static_cast<unsigned long long>(corpus.ratings), static_cast<unsigned long long>(corpus.items),
                  corpus.truth.size(), planted);
      return 0;
    }

    auto cfg = load_config(g);

    if (*run) {
      pipeline::run_pipeline(cfg, run_stages, run_force, print_outcome);
      return 0;
    }

    if (*relevance) {
      if (!rel_meta.empty()) cfg.meta = rel_meta;
      if (rel_min_books) cfg.ingest.min_category_books = *rel_min_books;
      if (g.out.empty()) cfg.out = "relevance";
      auto s = pipeline::make_stage("relevance", cfg);
      print_outcome(pipeline::run_stage(s, cfg.out));
      return 0;
    }

    if (*ingest) {
      if (!ing_ratings.empty()) cfg.ratings = ing_ratings;
      if (!ing_meta.empty()) cfg.meta = ing_meta;
      if (!ing_format.empty()) cfg.ingest.format = parse_record_format(ing_format);
      if (ing_min_user) cfg.ingest.min_user_ratings = *ing_min_user;
      if (ing_partition) cfg.ingest.partition_records = *ing_partition;
      cfg.validate();
      if (g.out.empty()) cfg.out = "ingest";
      if (cfg.ratings.empty()) throw ConfigError("ingest needs --ratings");
      fs::path rel_dir = ing_relevance;
      if (rel_dir.empty()) {
        if (cfg.meta.empty()) throw ConfigError("ingest needs --meta or --relevance");
        rel_dir = cfg.out / "relevance";
        print_outcome(pipeline::run_stage(pipeline::make_stage("relevance", cfg), rel_dir));
      }
      pipeline::StageSpec s;
      s.name = "ingest";
      s.inputs = {{"ratings", cfg.ratings}, {"relevance", rel_dir / "relevance.bin"}, {"items", rel_dir / "items.json"}};
      s.config = cfg.stage_config("ingest");
      s.outputs = {"preference.csv", "preference.bin", "activity.csv", "filter_manifest.json"};
      s.upstream = {rel_dir / "manifest.json"};
      s.body = [&](const fs::path& d) { return pipeline::ingest_stage(cfg.ratings, rel_dir, d, cfg.ingest); };
      print_outcome(pipeline::run_stage(s, cfg.out));
      return 0;
    }

    if (*thresholds) {
      if (thr_window) cfg.window.window_quarters = *thr_window;
      if (thr_min_points) cfg.window.min_window_points = *thr_min_points;
      if (thr_sigma) cfg.window.sigma_mult = *thr_sigma;
      cfg.validate();
      fs::path pref = thr_pref;
      if (pref.empty()) throw ConfigError("thresholds needs --preference");
      if (fs::is_directory(pref)) pref /= "preference.bin";
      if (g.out.empty()) cfg.out = "thresholds";
      pipeline::StageSpec s;
      s.name = "thresholds";
      s.inputs = {{"preference", pref}};
      s.config = cfg.stage_config("thresholds");
      s.outputs = {"thresholds.csv"};
      s.upstream = {pref.parent_path() / "manifest.json"};
      s.body = [&](const fs::path& d) { return pipeline::thresholds_stage(pref, d, cfg.window); };
      print_outcome(pipeline::run_stage(s, cfg.out));
      return 0;
    }

    if (*bte_cmd) {
      if (bte_ingest.empty() || bte_thresholds.empty()) throw ConfigError("bte needs --ingest DIR and --thresholds FILE");
      if (!bte_anchor.empty()) cfg.anchor = parse_time_anchor(bte_anchor);
      if (!bte_origin.empty()) {
        auto q = parse_quarter(bte_origin);
        if (!q) throw ConfigError("--origin must look like 1998Q1");
        cfg.origin = *q;
      }
      if (g.out.empty()) cfg.out = "bte";
      const fs::path ing = bte_ingest, thr = bte_thresholds;
      pipeline::StageSpec s;
      s.name = "bte";
      s.inputs = {{"preference", ing / "preference.bin"}, {"activity", ing / "activity.csv"}, {"thresholds", thr}};
      s.config = cfg.stage_config("bte");
      s.outputs = {"events.csv"};
      s.upstream = {ing / "manifest.json", thr.parent_path() / "manifest.json"};
      s.body = [&](const fs::path& d) {
        return pipeline::bte_stage(ing / "preference.bin", ing / "activity.csv", thr, d, cfg.origin, cfg.anchor);
      };
      print_outcome(pipeline::run_stage(s, cfg.out));
      return 0;
    }

    if (*fit) {
      if (!fit_model.empty()) cfg.model = lmm::parse_model(fit_model);
      if (fit_ablate) cfg.ablate_below = *fit_ablate;
      fs::path out = g.out.empty() ? fs::path("fit.json") : fs::path(g.out);
      if (fs::is_directory(out)) out /= "fit.json";
      const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
      pipeline::StageSpec s;
      s.name = "fit";
      s.inputs = {{"events", fit_events}};
      s.config = cfg.stage_config("fit");
      s.outputs = {out.filename().string(), fs::path(out).replace_extension(".txt").filename().string()};
      s.upstream = {fs::path(fit_events).parent_path() / "manifest.json"};
      s.body = [&](const fs::path&) {
        return pipeline::fit_stage(fit_events, out, cfg.model, cfg.fit, cfg.ablate_below);
      };
      auto o = pipeline::run_stage(s, dir);
      print_outcome(o);
      std::cout << io::read_file(fs::path(out).replace_extension(".txt"));
      return 0;
    }

    if (*rep) {
      if (g.out.empty()) cfg.out = "report";
      pipeline::StageSpec s;
      s.name = "report";
      s.inputs = {{"fit", rep_fit}, {"events", rep_events}};
      s.config = json::object();
      s.outputs = {"residual_vs_fitted.csv", "residual_qq.csv", "activity_vs_bte.csv", "bte_vs_time.csv"};
      s.upstream = {fs::path(rep_fit).parent_path() / "manifest.json"};
      s.body = [&](const fs::path& d) { return pipeline::report_stage(rep_fit, rep_events, d); };
      print_outcome(pipeline::run_stage(s, cfg.out));
      return 0;
    }
  } catch (const lmm::ConvergenceError& e) {
    std::fprintf(stderr, "convergence error: %s\n", e.what());
    return 4;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
