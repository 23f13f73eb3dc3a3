#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bte/config.hpp"
#include "bte/events.hpp"
#include "bte/fit_io.hpp"
#include "bte/ingest.hpp"
#include "bte/io.hpp"
#include "bte/lmm.hpp"
#include "bte/preference.hpp"
#include "bte/relevance.hpp"
#include "bte/report.hpp"

namespace bte::pipeline {

using nlohmann::json;
namespace fs = io::fs;

// ---------------------------------------------------------------------------
// Configuration shared by all stages.

struct PipelineConfig {
  fs::path ratings;
  fs::path meta;
  fs::path out{"out"};
  IngestOptions ingest;
  WindowConfig window;
  Quarter origin{kDatasetOrigin};
  TimeAnchor anchor{TimeAnchor::midpoint};
  lmm::ModelSpec model{lmm::ModelSpec::full()};
  lmm::FitOptions fit;
  std::optional<double> ablate_below;

  static constexpr std::string_view kKeys[] = {
      "ratings", "meta", "out", "format", "user_field", "item_field", "rating_field", "time_field",
      "meta_item_field", "meta_categories_field", "min_user_ratings", "min_category_books", "partition_records",
      "batch_lines", "threads", "window_quarters", "min_window_points", "sigma_mult", "origin", "time_anchor",
      "model", "ablate_below", "rel_tol", "grad_tol", "max_iter"};

  // Relative paths are resolved against `base` (the config file's directory).
  static PipelineConfig from_config(const FlatConfig& c, const fs::path& base = {}) {
    c.require_known(kKeys);
    PipelineConfig p;
    auto path = [&](std::string_view k, fs::path fallback) {
      auto v = c.raw(k);
      fs::path r = v ? fs::path(*v) : fallback;
      if (!r.empty() && r.is_relative() && !base.empty() && v) r = base / r;
      return r;
    };
    p.ratings = path("ratings", {});
    p.meta = path("meta", {});
    p.out = path("out", "out");
    p.ingest.format = parse_record_format(c.get_string("format", "jsonl"));
    p.ingest.rating_fields.user = c.get_string("user_field", p.ingest.rating_fields.user);
    p.ingest.rating_fields.item = c.get_string("item_field", p.ingest.rating_fields.item);
    p.ingest.rating_fields.rating = c.get_string("rating_field", p.ingest.rating_fields.rating);
    p.ingest.rating_fields.time = c.get_string("time_field", p.ingest.rating_fields.time);
    p.ingest.meta_fields.item = c.get_string("meta_item_field", p.ingest.meta_fields.item);
    p.ingest.meta_fields.categories = c.get_string("meta_categories_field", p.ingest.meta_fields.categories);
    p.ingest.min_user_ratings = c.get_uint("min_user_ratings", p.ingest.min_user_ratings);
    p.ingest.min_category_books = c.get_uint("min_category_books", p.ingest.min_category_books);
    p.ingest.partition_records = c.get_uint("partition_records", p.ingest.partition_records);
    p.ingest.batch_lines = c.get_uint("batch_lines", p.ingest.batch_lines);
    p.ingest.threads = static_cast<unsigned>(c.get_uint("threads", p.ingest.threads));
    p.window.window_quarters = static_cast<int>(c.get_int("window_quarters", p.window.window_quarters));
    p.window.min_window_points = c.get_uint("min_window_points", p.window.min_window_points);
    p.window.sigma_mult = c.get_double("sigma_mult", p.window.sigma_mult);
    if (auto o = c.raw("origin")) {
      auto q = parse_quarter(*o);
      if (!q) throw ConfigError("origin must look like 1998Q1, got '" + *o + "'");
      p.origin = *q;
    }
    p.anchor = parse_time_anchor(c.get_string("time_anchor", "midpoint"));
    p.model = lmm::parse_model(c.get_string("model", "full"));
    if (c.has("ablate_below")) p.ablate_below = c.get_double("ablate_below", -0.5);
    p.fit.rel_tol = c.get_double("rel_tol", p.fit.rel_tol);
    p.fit.grad_tol = c.get_double("grad_tol", p.fit.grad_tol);
    p.fit.max_iter = static_cast<int>(c.get_int("max_iter", p.fit.max_iter));
    p.validate();
    return p;
  }

  void validate() const {
    window.validate();
    if (ingest.min_user_ratings < 1) throw ConfigError("min_user_ratings must be >= 1");
    if (ingest.partition_records < 1) throw ConfigError("partition_records must be >= 1");
    if (ingest.batch_lines < 1) throw ConfigError("batch_lines must be >= 1");
    if (ingest.threads < 1) throw ConfigError("threads must be >= 1");
    if (fit.max_iter < 1) throw ConfigError("max_iter must be >= 1");
    if (!(fit.rel_tol > 0.0) || !(fit.grad_tol > 0.0)) throw ConfigError("tolerances must be > 0");
  }

  // Per-stage settings recorded in manifests and folded into cache keys.
  [[nodiscard]] json stage_config(std::string_view stage) const {
    if (stage == "relevance")
      return {{"min_category_books", ingest.min_category_books},
              {"meta_item_field", ingest.meta_fields.item},
              {"meta_categories_field", ingest.meta_fields.categories}};
    if (stage == "ingest")
      return {{"format", ingest.format == RecordFormat::jsonl ? "jsonl" : "csv"},
              {"user_field", ingest.rating_fields.user},
              {"item_field", ingest.rating_fields.item},
              {"rating_field", ingest.rating_fields.rating},
              {"time_field", ingest.rating_fields.time},
              {"min_user_ratings", ingest.min_user_ratings},
              {"partition_records", ingest.partition_records}};
    if (stage == "thresholds")
      return {{"window_quarters", window.window_quarters},
              {"min_window_points", window.min_window_points},
              {"sigma_mult", window.sigma_mult}};
    if (stage == "bte")
      return {{"origin", origin.str()}, {"time_anchor", anchor == TimeAnchor::midpoint ? "midpoint" : "closing"}};
    if (stage == "fit")
      return {{"model", lmm::model_name(model)},
              {"ablate_below", ablate_below ? json(*ablate_below) : json(nullptr)},
              {"rel_tol", fit.rel_tol},
              {"grad_tol", fit.grad_tol},
              {"max_iter", fit.max_iter}};
    return json::object();
  }
};

// ---------------------------------------------------------------------------
// Stage bodies. Each writes its outputs into `dir` and returns counts.

inline json relevance_stage(const fs::path& meta, const fs::path& dir, const IngestOptions& opt) {
  FilterManifest m;
  auto rel = prepare_relevance(meta, opt, m);
  write_relevance_binary(rel, dir / "relevance.bin");
  write_relevance_csv(rel, dir / "relevance.csv");
  json items = m.to_json();
  io::write_file(dir / "items.json", items.dump(2) + "\n");
  return {{"items_in", m.items_in},
          {"items_retained", m.items_retained},
          {"categories_in", m.categories_in},
          {"categories_retained", m.categories_retained},
          {"relevance_entries", rel.entries()}};
}

inline FilterManifest item_counts_from_json(const json& j) {
  FilterManifest m;
  m.min_category_books = j.at("min_category_books").get<std::uint64_t>();
  const auto& it = j.at("items");
  m.items_in = it.at("in").get<std::uint64_t>();
  m.items_malformed = it.at("malformed").get<std::uint64_t>();
  m.items_duplicate = it.at("duplicate_ids").get<std::uint64_t>();
  m.items_without_categories = it.at("without_categories").get<std::uint64_t>();
  m.items_dropped = it.at("dropped_by_category_filter").get<std::uint64_t>();
  m.items_retained = it.at("retained").get<std::uint64_t>();
  m.categories_in = j.at("categories").at("in").get<std::uint64_t>();
  m.categories_retained = j.at("categories").at("retained").get<std::uint64_t>();
  return m;
}

inline json ingest_stage(const fs::path& ratings, const fs::path& relevance_dir, const fs::path& dir,
                         const IngestOptions& opt) {
  auto rel = read_relevance_binary(relevance_dir / "relevance.bin");
  auto items = json::parse(io::read_file(relevance_dir / "items.json"), nullptr, false);
  if (items.is_discarded()) throw DataError("cannot parse " + (relevance_dir / "items.json").string());
  auto r = run_ingest(ratings, rel, dir, opt, item_counts_from_json(items));
  if (!r.manifest.conserved()) throw DataError("ingest rating counts do not add up");
  return {{"ratings_in", r.manifest.ratings_in},
          {"malformed", r.manifest.malformed},
          {"filtered", r.manifest.ratings_filtered()},
          {"unmatched", r.manifest.unmatched},
          {"ratings_retained", r.manifest.ratings_retained},
          {"users_retained", r.manifest.users_retained},
          {"preference_rows", r.preference_rows},
          {"activity_rows", r.activity_rows},
          {"partitions", r.partitions}};
}

inline json thresholds_stage(const fs::path& preference_bin, const fs::path& dir, const WindowConfig& w) {
  auto rows = read_quarter_rows_binary(preference_bin);
  auto series = build_series(rows);
  auto thr = all_thresholds(series, w);
  write_thresholds_csv(thr, dir / "thresholds.csv");
  std::size_t points = 0;
  for (const auto& t : thr) points += t.points.size();
  return {{"preference_rows", rows.size()}, {"series", series.size()}, {"users", thr.size()}, {"threshold_points", points}};
}

inline json bte_stage(const fs::path& preference_bin, const fs::path& activity_csv, const fs::path& thresholds_csv,
                      const fs::path& dir, Quarter origin, TimeAnchor anchor) {
  auto rows = read_quarter_rows_binary(preference_bin);
  auto series = build_series(rows);
  auto thr = read_thresholds_csv(thresholds_csv);
  auto act = read_activity_csv(activity_csv);
  ActivityIndex index(act);
  auto events = extract_all_events(series, thr, index, origin, anchor);
  write_events_csv(events, dir / "events.csv");
  std::size_t users = 0;
  {
    std::vector<std::string> u;
    for (const auto& e : events) u.push_back(e.user_id);
    std::sort(u.begin(), u.end());
    users = static_cast<std::size_t>(std::unique(u.begin(), u.end()) - u.begin());
  }
  return {{"series", series.size()}, {"events", events.size()}, {"users_with_events", users}};
}

inline json fit_stage(const fs::path& events_csv, const fs::path& fit_json, const lmm::ModelSpec& spec,
                      const lmm::FitOptions& opt, std::optional<double> ablate_below) {
  auto table = read_table_auto(events_csv);
  if (table.empty()) throw DataError(events_csv.string() + " has no events to fit");
  const auto txt = fs::path(fit_json).replace_extension(".txt");
  try {
    auto fit = lmm::fit_reml(table, spec, opt);
    json counts = {{"observations", fit.n_obs}, {"converged", fit.convergence.converged},
                   {"singular", fit.convergence.singular}, {"iterations", fit.convergence.iterations}};
    if (ablate_below) {
      auto a = lmm::ablate_and_refit(fit, table, spec, *ablate_below, opt);
      io::write_file(fit_json, lmm::to_json(a, *ablate_below).dump(2) + "\n");
      io::write_file(txt, lmm::format_table({&a.original, &a.refit}, {"All categories", "Ablated"}));
      counts["removed_levels"] = a.removed_levels.size();
      counts["rows_removed"] = a.rows_removed;
      counts["time_shift"] = a.time_shift;
    } else {
      io::write_file(fit_json, json{{"fit", lmm::to_json(fit)}}.dump(2) + "\n");
      io::write_file(txt, lmm::format_table(fit));
    }
    return counts;
  } catch (const lmm::ConvergenceError& e) {
    auto failed = fs::path(fit_json).replace_extension(".failed.json");
    io::write_file(failed, json{{"fit", lmm::to_json(e.best())}}.dump(2) + "\n");
    throw;
  }
}

inline json report_stage(const fs::path& fit_json, const fs::path& events_csv, const fs::path& dir) {
  auto fit = lmm::read_fit(fit_json);
  auto table = read_table_auto(events_csv);
  auto bundle = report::diagnostics(fit, table);
  auto files = report::write_bundle(bundle, fit, dir);
  return {{"observations", table.size()}, {"tables", files.size()}};
}

// ---------------------------------------------------------------------------
// Manifests and caching

struct StageSpec {
  std::string name;
  std::vector<std::pair<std::string, fs::path>> inputs;  // (label, file)
  json config;
  std::vector<std::string> outputs;  // file names inside the stage directory
  std::function<json(const fs::path& dir)> body;
  std::vector<fs::path> upstream;  // manifests of the stages this one consumes
};

struct StageOutcome {
  std::string name;
  bool cached{false};
  json manifest;
};

inline json digest_files(const std::vector<std::pair<std::string, fs::path>>& files) {
  json j = json::object();
  for (const auto& [label, path] : files) j[label] = {{"path", path.string()}, {"sha256", io::sha256_file(path)}};
  return j;
}

// True when a prior manifest exists with identical input digests and
// config, and every recorded output is still present with its digest.
inline bool cache_valid(const json& prior, const json& inputs, const json& config, const fs::path& dir) {
  if (!prior.is_object() || !prior.contains("inputs") || !prior.contains("config") || !prior.contains("outputs"))
    return false;
  auto strip = [](const json& in) {
    json j = json::object();
    for (const auto& [k, v] : in.items()) j[k] = v.at("sha256");
    return j;
  };
  if (strip(prior.at("inputs")) != strip(inputs) || prior.at("config") != config) return false;
  for (const auto& [name, digest] : prior.at("outputs").items()) {
    if (!fs::exists(dir / name)) return false;
    if (io::sha256_file(dir / name) != digest.get<std::string>()) return false;
  }
  return true;
}

inline StageOutcome run_stage(const StageSpec& s, const fs::path& dir, bool force = false) {
  for (const auto& [label, path] : s.inputs)
    if (!fs::exists(path))
      throw ConfigError("stage '" + s.name + "' needs " + label + " at " + path.string() +
                        " (run the upstream stage first)");
  fs::create_directories(dir);
  const auto manifest_path = dir / "manifest.json";
  json inputs = digest_files(s.inputs);
  StageOutcome out{s.name, false, {}};
  if (!force && fs::exists(manifest_path)) {
    auto prior = json::parse(io::read_file(manifest_path), nullptr, false);
    if (cache_valid(prior, inputs, s.config, dir)) {
      out.cached = true;
      out.manifest = prior;
      return out;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  json counts = s.body(dir);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json outputs = json::object();
  for (const auto& name : s.outputs) {
    if (!fs::exists(dir / name)) throw DataError("stage '" + s.name + "' did not produce " + name);
    outputs[name] = io::sha256_file(dir / name);
  }
  json upstream = json::object();
  for (const auto& m : s.upstream) {
    if (!fs::exists(m)) continue;
    auto um = json::parse(io::read_file(m), nullptr, false);
    if (um.is_object() && um.contains("stage") && um.contains("outputs"))
      upstream[um.at("stage").get<std::string>()] = io::sha256_string(um.at("outputs").dump());
  }
  out.manifest = {{"stage", s.name},   {"inputs", inputs},   {"config", s.config},
                  {"outputs", outputs}, {"counts", counts},   {"wall_seconds", wall},
                  {"upstream", upstream}, {"config_sha256", io::sha256_string(s.config.dump())}};
  io::write_file(manifest_path, out.manifest.dump(2) + "\n");
  return out;
}

inline const std::vector<std::string>& all_stages() {
  static const std::vector<std::string> s{"relevance", "ingest", "thresholds", "bte", "fit", "report"};
  return s;
}

// Stage specs for the standard directory layout under cfg.out.
inline StageSpec make_stage(const std::string& name, const PipelineConfig& cfg) {
  const auto root = cfg.out;
  const auto rel = root / "relevance", ing = root / "ingest", thr = root / "thresholds", bte = root / "bte",
             fit = root / "fit", rep = root / "report";
  StageSpec s;
  s.name = name;
  s.config = cfg.stage_config(name);
  if (name == "relevance") {
    if (cfg.meta.empty()) throw ConfigError("config key 'meta' is required for the relevance stage");
    s.inputs = {{"meta", cfg.meta}};
    s.outputs = {"relevance.bin", "relevance.csv", "items.json"};
    s.body = [&cfg](const fs::path& d) { return relevance_stage(cfg.meta, d, cfg.ingest); };
  } else if (name == "ingest") {
    if (cfg.ratings.empty()) throw ConfigError("config key 'ratings' is required for the ingest stage");
    s.inputs = {{"ratings", cfg.ratings}, {"relevance", rel / "relevance.bin"}, {"items", rel / "items.json"}};
    s.outputs = {"preference.csv", "preference.bin", "activity.csv", "filter_manifest.json"};
    s.body = [&cfg, rel](const fs::path& d) { return ingest_stage(cfg.ratings, rel, d, cfg.ingest); };
    s.upstream = {rel / "manifest.json"};
  } else if (name == "thresholds") {
    s.inputs = {{"preference", ing / "preference.bin"}};
    s.outputs = {"thresholds.csv"};
    s.body = [&cfg, ing](const fs::path& d) { return thresholds_stage(ing / "preference.bin", d, cfg.window); };
    s.upstream = {ing / "manifest.json"};
  } else if (name == "bte") {
    s.inputs = {{"preference", ing / "preference.bin"},
                {"activity", ing / "activity.csv"},
                {"thresholds", thr / "thresholds.csv"}};
    s.outputs = {"events.csv"};
    s.body = [&cfg, ing, thr](const fs::path& d) {
      return bte_stage(ing / "preference.bin", ing / "activity.csv", thr / "thresholds.csv", d, cfg.origin,
                       cfg.anchor);
    };
    s.upstream = {ing / "manifest.json", thr / "manifest.json"};
  } else if (name == "fit") {
    s.inputs = {{"events", bte / "events.csv"}};
    s.outputs = {"fit.json", "fit.txt"};
    s.body = [&cfg, bte](const fs::path& d) {
      return fit_stage(bte / "events.csv", d / "fit.json", cfg.model, cfg.fit, cfg.ablate_below);
    };
    s.upstream = {bte / "manifest.json"};
  } else if (name == "report") {
    s.inputs = {{"fit", fit / "fit.json"}, {"events", bte / "events.csv"}};
    s.body = [fit, bte](const fs::path& d) { return report_stage(fit / "fit.json", bte / "events.csv", d); };
    s.outputs = {"residual_vs_fitted.csv", "residual_qq.csv", "activity_vs_bte.csv", "bte_vs_time.csv"};
    s.upstream = {fit / "manifest.json", bte / "manifest.json"};
  } else {
    throw ConfigError("unknown stage '" + name + "'");
  }
  return s;
}

// Runs the requested stages (all when empty) in dependency order. Each stage
// directory receives a manifest.json; unchanged stages are cache hits.
inline std::vector<StageOutcome> run_pipeline(const PipelineConfig& cfg, std::vector<std::string> stages = {},
                                              bool force = false,
                                              const std::function<void(const StageOutcome&)>& on_stage = {}) {
  if (stages.empty()) stages = all_stages();
  for (const auto& s : stages)
    if (std::find(all_stages().begin(), all_stages().end(), s) == all_stages().end())
      throw ConfigError("unknown stage '" + s + "'");
  std::vector<StageOutcome> out;
  for (const auto& name : all_stages()) {
    if (std::find(stages.begin(), stages.end(), name) == stages.end()) continue;
    auto spec = make_stage(name, cfg);
    out.push_back(run_stage(spec, cfg.out / name, force));
    if (on_stage) on_stage(out.back());
  }
  return out;
}

}  // namespace bte::pipeline
