#pragma once

#include <algorithm>
#include <cstdint>
#include <future>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bte/common.hpp"
#include "bte/io.hpp"
#include "bte/records.hpp"
#include "bte/relevance.hpp"

namespace bte {

// Population filters and per-stage tallies. Rating conservation:
//   ratings_in = ratings_retained + ratings_filtered() + malformed + unmatched.
struct FilterManifest {
  std::uint64_t min_user_ratings{20};
  std::uint64_t min_category_books{100};

  std::uint64_t ratings_in{0};
  std::uint64_t malformed{0};
  std::uint64_t users_in{0};
  std::uint64_t users_retained{0};
  std::uint64_t ratings_user_filtered{0};
  std::uint64_t duplicates_dropped{0};
  std::uint64_t unmatched{0};
  std::uint64_t ratings_retained{0};
  std::vector<std::uint64_t> malformed_lines;

  std::uint64_t items_in{0};
  std::uint64_t items_malformed{0};
  std::uint64_t items_duplicate{0};
  std::uint64_t items_without_categories{0};
  std::uint64_t items_dropped{0};  // emptied by the category filter
  std::uint64_t items_retained{0};
  std::uint64_t categories_in{0};
  std::uint64_t categories_retained{0};

  [[nodiscard]] std::uint64_t ratings_filtered() const noexcept { return ratings_user_filtered + duplicates_dropped; }
  [[nodiscard]] bool conserved() const noexcept {
    return ratings_in == ratings_retained + ratings_filtered() + malformed + unmatched;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    return nlohmann::json{
        {"min_user_ratings", min_user_ratings},
        {"min_category_books", min_category_books},
        {"ratings",
         {{"in", ratings_in},
          {"malformed", malformed},
          {"malformed_lines", malformed_lines},
          {"user_filtered", ratings_user_filtered},
          {"duplicates_dropped", duplicates_dropped},
          {"filtered", ratings_filtered()},
          {"unmatched", unmatched},
          {"retained", ratings_retained},
          {"conserved", conserved()}}},
        {"users", {{"in", users_in}, {"retained", users_retained}}},
        {"items",
         {{"in", items_in},
          {"malformed", items_malformed},
          {"duplicate_ids", items_duplicate},
          {"without_categories", items_without_categories},
          {"dropped_by_category_filter", items_dropped},
          {"retained", items_retained}}},
        {"categories", {{"in", categories_in}, {"retained", categories_retained}}},
    };
  }
};

// ---------------------------------------------------------------------------
// User filter: strictly more than `min_count` ratings.

// Two passes over a replayable source: `replay(fn)` must call fn(const
// RatingRecord&) for every record, in the same order each time. Only the
// per-user counts are held in memory.
template <class Replay, class Emit>
FilterManifest filter_users(Replay&& replay, std::uint64_t min_count, Emit&& emit) {
  if (min_count < 1) throw ConfigError("min_user_ratings must be >= 1");
  std::unordered_map<std::string, std::uint64_t> counts;
  FilterManifest m;
  m.min_user_ratings = min_count;
  replay([&](const RatingRecord& r) {
    ++counts[r.user_id];
    ++m.ratings_in;
  });
  m.users_in = counts.size();
  for (const auto& [_, c] : counts)
    if (c > min_count) ++m.users_retained;
  replay([&](const RatingRecord& r) {
    if (counts.find(r.user_id)->second > min_count) {
      ++m.ratings_retained;
      emit(r);
    } else {
      ++m.ratings_user_filtered;
    }
  });
  return m;
}

inline std::pair<std::vector<RatingRecord>, FilterManifest> filter_users(std::span<const RatingRecord> ratings,
                                                                          std::uint64_t min_count) {
  std::vector<RatingRecord> kept;
  auto m = filter_users([&](auto&& fn) { std::for_each(ratings.begin(), ratings.end(), fn); }, min_count,
                        [&](const RatingRecord& r) { kept.push_back(r); });
  return {std::move(kept), m};
}

// ---------------------------------------------------------------------------
// Category filter: keep labels used on strictly more than `min_books` items.

struct CategoryFilterResult {
  std::vector<ItemCategories> items;
  std::uint64_t items_in{0};
  std::uint64_t items_dropped{0};
  std::uint64_t categories_in{0};
  std::uint64_t categories_retained{0};
};

inline CategoryFilterResult filter_categories(std::vector<ItemCategories> items, std::uint64_t min_books) {
  if (min_books < 1) throw ConfigError("min_category_books must be >= 1");
  std::unordered_map<std::string, std::uint64_t> uses;
  for (const auto& it : items)
    for (const auto& c : it.categories) ++uses[c];
  CategoryFilterResult res;
  res.items_in = items.size();
  res.categories_in = uses.size();
  for (const auto& [_, n] : uses)
    if (n > min_books) ++res.categories_retained;
  for (auto& it : items) {
    std::erase_if(it.categories, [&](const std::string& c) { return uses[c] <= min_books; });
    if (it.categories.empty()) {
      ++res.items_dropped;
      continue;
    }
    res.items.push_back(std::move(it));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Quarter aggregation

struct QuarterRow {
  std::string user_id;
  std::string category;
  Quarter quarter;
  double preference_sum{0.0};
  std::uint64_t rating_count{0};

  friend bool operator==(const QuarterRow&, const QuarterRow&) = default;
};

// Rating-level activity: each rating counts once regardless of its category count.
struct ActivityRow {
  std::string user_id;
  Quarter quarter;
  std::uint64_t rating_count{0};

  friend bool operator==(const ActivityRow&, const ActivityRow&) = default;
};

struct QuarterTable {
  std::vector<QuarterRow> rows;
  std::vector<ActivityRow> activity;
  std::uint64_t unmatched{0};
  std::uint64_t ratings_used{0};

  // Monoid merge: rows with equal keys are summed. Leaves the table sorted.
  void merge(QuarterTable other) {
    rows.insert(rows.end(), std::make_move_iterator(other.rows.begin()), std::make_move_iterator(other.rows.end()));
    activity.insert(activity.end(), std::make_move_iterator(other.activity.begin()),
                    std::make_move_iterator(other.activity.end()));
    unmatched += other.unmatched;
    ratings_used += other.ratings_used;
    normalize();
  }

  void normalize() {
    auto key = [](const QuarterRow& r) { return std::tie(r.user_id, r.category, r.quarter); };
    std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
    std::vector<QuarterRow> merged;
    for (auto& r : rows) {
      if (!merged.empty() && key(merged.back()) == key(r)) {
        merged.back().preference_sum += r.preference_sum;
        merged.back().rating_count += r.rating_count;
      } else {
        merged.push_back(std::move(r));
      }
    }
    rows = std::move(merged);
    auto akey = [](const ActivityRow& r) { return std::tie(r.user_id, r.quarter); };
    std::sort(activity.begin(), activity.end(), [&](const auto& a, const auto& b) { return akey(a) < akey(b); });
    std::vector<ActivityRow> amerged;
    for (auto& r : activity) {
      if (!amerged.empty() && akey(amerged.back()) == akey(r))
        amerged.back().rating_count += r.rating_count;
      else
        amerged.push_back(std::move(r));
    }
    activity = std::move(amerged);
  }
};

namespace detail {

inline bool record_order(const RatingRecord& a, const RatingRecord& b) {
  return std::tie(a.user_id, a.item_id, a.timestamp, a.rating) < std::tie(b.user_id, b.item_id, b.timestamp, b.rating);
}

// Aggregates records already sorted by record_order. Summation order is fixed
// by the sort, so output does not depend on input order.
inline QuarterTable aggregate_sorted(std::span<const RatingRecord> sorted, const RelevanceMatrix& rel) {
  QuarterTable out;
  const auto& cats = rel.categories();
  std::size_t i = 0;
  std::map<std::pair<CategoryId, std::int64_t>, std::pair<double, std::uint64_t>> cells;
  std::map<std::int64_t, std::uint64_t> act;
  while (i < sorted.size()) {
    std::size_t j = i;
    cells.clear();
    act.clear();
    while (j < sorted.size() && sorted[j].user_id == sorted[i].user_id) {
      const auto& r = sorted[j++];
      const auto* row = rel.row(r.item_id);
      if (row == nullptr || row->empty()) {
        ++out.unmatched;
        continue;
      }
      ++out.ratings_used;
      const auto q = Quarter::from_unix(r.timestamp).index();
      ++act[q];
      for (const auto& e : *row) {
        auto& cell = cells[{e.category, q}];
        cell.first += e.m * r.rating;
        cell.second += 1;
      }
    }
    for (const auto& [k, v] : cells)
      out.rows.push_back({sorted[i].user_id, cats.name(k.first), Quarter::from_index(k.second), v.first, v.second});
    for (const auto& [q, n] : act) out.activity.push_back({sorted[i].user_id, Quarter::from_index(q), n});
    i = j;
  }
  return out;
}

}  // namespace detail

// Removes repeated (user, item) ratings, keeping the latest timestamp (ties:
// the higher rating). Sorts `ratings` by (user, item, time, rating). Returns
// the number of dropped records.
inline std::uint64_t drop_duplicate_ratings(std::vector<RatingRecord>& ratings) {
  std::sort(ratings.begin(), ratings.end(), detail::record_order);
  std::vector<RatingRecord> kept;
  kept.reserve(ratings.size());
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    if (i + 1 < ratings.size() && ratings[i + 1].user_id == ratings[i].user_id &&
        ratings[i + 1].item_id == ratings[i].item_id)
      continue;
    kept.push_back(std::move(ratings[i]));
  }
  std::uint64_t dropped = ratings.size() - kept.size();
  ratings = std::move(kept);
  return dropped;
}

// Per (user, category, quarter): sum of m * r and number of contributing
// ratings. Records whose item has no relevance row are tallied as unmatched.
inline QuarterTable aggregate_quarters(std::span<const RatingRecord> ratings, const RelevanceMatrix& rel) {
  std::vector<RatingRecord> sorted(ratings.begin(), ratings.end());
  std::sort(sorted.begin(), sorted.end(), detail::record_order);
  auto t = detail::aggregate_sorted(sorted, rel);
  t.normalize();
  return t;
}

// ---------------------------------------------------------------------------
// Table files

inline constexpr std::string_view kQuarterMagic{"BTEQTR1\n", 8};

inline void write_quarter_rows_csv(io::CsvWriter& w, std::span<const QuarterRow> rows) {
  for (const auto& r : rows)
    w.field(r.user_id)
        .field(r.category)
        .field(r.quarter.year)
        .field(r.quarter.quarter)
        .field(r.preference_sum)
        .field(r.rating_count)
        .end_row();
}

inline void write_quarter_rows_binary(io::BinaryWriter& w, std::span<const QuarterRow> rows) {
  for (const auto& r : rows) {
    w.str(r.user_id);
    w.str(r.category);
    w.i32(r.quarter.year);
    w.i32(r.quarter.quarter);
    w.f64(r.preference_sum);
    w.u64(r.rating_count);
  }
}

inline void write_activity_rows_csv(io::CsvWriter& w, std::span<const ActivityRow> rows) {
  for (const auto& r : rows) w.field(r.user_id).field(r.quarter.year).field(r.quarter.quarter).field(r.rating_count).end_row();
}

inline constexpr std::string_view kQuarterHeader[] = {
    "user_id", "category", "year", "quarter", "preference_sum", "rating_count"};
inline constexpr std::string_view kActivityHeader[] = {"user_id", "year", "quarter",
                                                                            "rating_count"};

inline void write_quarter_table(const QuarterTable& t, const io::fs::path& dir) {
  io::fs::create_directories(dir);
  io::CsvWriter csv(dir / "preference.csv", kQuarterHeader);
  write_quarter_rows_csv(csv, t.rows);
  csv.close();
  io::BinaryWriter bin(dir / "preference.bin", kQuarterMagic);
  write_quarter_rows_binary(bin, t.rows);
  bin.close();
  io::CsvWriter act(dir / "activity.csv", kActivityHeader);
  write_activity_rows_csv(act, t.activity);
  act.close();
}

inline std::vector<QuarterRow> read_quarter_rows_binary(const io::fs::path& path) {
  io::BinaryReader r(path, kQuarterMagic);
  std::vector<QuarterRow> rows;
  while (r.more()) {
    QuarterRow q;
    q.user_id = r.str();
    q.category = r.str();
    int y = r.i32();
    int qq = r.i32();
    q.quarter = Quarter(y, qq);
    q.preference_sum = r.f64();
    q.rating_count = r.u64();
    rows.push_back(std::move(q));
  }
  return rows;
}

inline std::vector<QuarterRow> read_quarter_rows_csv(const io::fs::path& path) {
  io::CsvReader r(path);
  auto cu = r.column("user_id"), cc = r.column("category"), cy = r.column("year"), cq = r.column("quarter"),
       cs = r.column("preference_sum"), cn = r.column("rating_count");
  std::vector<QuarterRow> rows;
  std::vector<std::string> f;
  while (r.next(f))
    rows.push_back({f[cu], f[cc], Quarter(r.integer<int>(f, cy), r.integer<int>(f, cq)), r.number(f, cs),
                    r.integer<std::uint64_t>(f, cn)});
  return rows;
}

inline std::vector<ActivityRow> read_activity_csv(const io::fs::path& path) {
  io::CsvReader r(path);
  auto cu = r.column("user_id"), cy = r.column("year"), cq = r.column("quarter"), cn = r.column("rating_count");
  std::vector<ActivityRow> rows;
  std::vector<std::string> f;
  while (r.next(f))
    rows.push_back({f[cu], Quarter(r.integer<int>(f, cy), r.integer<int>(f, cq)), r.integer<std::uint64_t>(f, cn)});
  return rows;
}

// Loads an ingest output directory (binary table preferred).
inline QuarterTable read_quarter_table(const io::fs::path& dir) {
  QuarterTable t;
  if (io::fs::exists(dir / "preference.bin"))
    t.rows = read_quarter_rows_binary(dir / "preference.bin");
  else
    t.rows = read_quarter_rows_csv(dir / "preference.csv");
  t.activity = read_activity_csv(dir / "activity.csv");
  return t;
}

// ---------------------------------------------------------------------------
// Streaming pipeline: stream -> user filter -> dedup -> join -> aggregate.

inline constexpr std::size_t kMaxPartitions = 512;  // spill files open at once

struct IngestOptions {
  RecordFormat format{RecordFormat::jsonl};
  RatingFields rating_fields{};
  MetaFields meta_fields{};
  std::uint64_t min_user_ratings{20};
  std::uint64_t min_category_books{100};
  unsigned threads{1};
  // Spill partition target size. Peak memory is roughly threads x this many
  // records once the input exceeds that.
  std::size_t partition_records{std::size_t{1} << 18};
  std::size_t batch_lines{std::size_t{1} << 15};
};

struct IngestResult {
  FilterManifest manifest;
  std::uint64_t preference_rows{0};
  std::uint64_t activity_rows{0};
  std::size_t partitions{0};
};

// Category filter + relevance from an item-metadata file.
inline RelevanceMatrix prepare_relevance(const io::fs::path& meta_path, const IngestOptions& opt,
                                         FilterManifest& manifest) {
  MetadataStats ms;
  auto items = read_metadata(meta_path, opt.meta_fields, ms);
  auto filtered = filter_categories(std::move(items), opt.min_category_books);
  manifest.min_category_books = opt.min_category_books;
  manifest.items_in = ms.lines;
  manifest.items_malformed = ms.malformed;
  manifest.items_duplicate = ms.duplicates;
  manifest.items_without_categories = ms.empty;
  manifest.items_dropped = filtered.items_dropped;
  manifest.items_retained = filtered.items.size();
  manifest.categories_in = filtered.categories_in;
  manifest.categories_retained = filtered.categories_retained;
  return build_relevance(filtered.items);
}

namespace detail {

// Parses a batch of raw lines on up to `threads` workers. Results keep input order.
inline void parse_batch(const RatingStream& stream, std::span<const std::string> lines,
                        std::vector<RatingRecord>& out, std::vector<char>& ok, unsigned threads) {
  out.resize(lines.size());
  ok.assign(lines.size(), 0);
  auto work = [&](std::size_t lo, std::size_t hi) {
    std::vector<std::string> scratch;
    for (std::size_t k = lo; k < hi; ++k) ok[k] = stream.parse(lines[k], out[k], scratch) ? 1 : 0;
  };
  if (threads <= 1 || lines.size() < 1024) {
    work(0, lines.size());
    return;
  }
  std::vector<std::future<void>> tasks;
  const std::size_t step = (lines.size() + threads - 1) / threads;
  for (std::size_t lo = 0; lo < lines.size(); lo += step)
    tasks.push_back(std::async(std::launch::async, work, lo, std::min(lines.size(), lo + step)));
  for (auto& t : tasks) t.get();
}

template <class Fn>
void for_each_parsed(const io::fs::path& path, const IngestOptions& opt, StreamStats& stats, Fn&& fn) {
  RatingStream stream(path, opt.format, opt.rating_fields);
  std::vector<std::string> lines;
  std::vector<std::uint64_t> numbers;
  std::vector<RatingRecord> parsed;
  std::vector<char> ok;
  while (stream.next_lines(lines, numbers, opt.batch_lines) > 0) {
    parse_batch(stream, lines, parsed, ok, opt.threads);
    for (std::size_t k = 0; k < lines.size(); ++k) {
      if (ok[k])
        fn(parsed[k]);
      else
        stream.stats().note_malformed(numbers[k]);
    }
  }
  stats = stream.stats();
}

inline void write_spill(io::BinaryWriter& w, const RatingRecord& r) {
  w.str(r.user_id);
  w.str(r.item_id);
  w.i32(r.rating);
  w.i64(r.timestamp);
}

inline constexpr std::string_view kSpillMagic{"BTESPL1\n", 8};

struct PartitionOutput {
  QuarterTable table;
  std::uint64_t duplicates{0};
};

inline PartitionOutput process_partition(const io::fs::path& path, const RelevanceMatrix& rel) {
  std::vector<RatingRecord> recs;
  {
    io::BinaryReader r(path, kSpillMagic);
    while (r.more()) {
      RatingRecord rec;
      rec.user_id = r.str();
      rec.item_id = r.str();
      rec.rating = r.i32();
      rec.timestamp = r.i64();
      recs.push_back(std::move(rec));
    }
  }
  PartitionOutput out;
  out.duplicates = drop_duplicate_ratings(recs);
  out.table = aggregate_sorted(recs, rel);
  return out;
}

}  // namespace detail

// Runs the full ingest stage and writes preference.{csv,bin}, activity.csv and
// filter_manifest.json into `out_dir`. Peak memory is O(#users + partition),
// independent of the number of ratings.
inline IngestResult run_ingest(const io::fs::path& ratings_path, const RelevanceMatrix& rel,
                               const io::fs::path& out_dir, const IngestOptions& opt, FilterManifest manifest = {}) {
  if (opt.min_user_ratings < 1) throw ConfigError("min_user_ratings must be >= 1");
  io::fs::create_directories(out_dir);
  manifest.min_user_ratings = opt.min_user_ratings;

  // Pass 1: per-user counts.
  std::unordered_map<std::string, std::uint64_t> counts;
  StreamStats stats;
  detail::for_each_parsed(ratings_path, opt, stats, [&](const RatingRecord& r) { ++counts[r.user_id]; });
  manifest.ratings_in = stats.lines;
  manifest.malformed = stats.malformed;
  manifest.malformed_lines = stats.malformed_lines;
  manifest.users_in = counts.size();
  std::uint64_t retained = 0;
  for (auto it = counts.begin(); it != counts.end();) {
    if (it->second > opt.min_user_ratings) {
      ++manifest.users_retained;
      retained += it->second;
      ++it;
    } else {
      manifest.ratings_user_filtered += it->second;
      it = counts.erase(it);
    }
  }

  // Pass 2: spill retained records into user-hash partitions.
  const std::size_t parts =
      std::clamp<std::size_t>((retained + opt.partition_records - 1) / std::max<std::size_t>(opt.partition_records, 1),
                              1, kMaxPartitions);
  const auto spill_dir = out_dir / ".spill";
  io::fs::create_directories(spill_dir);
  {
    std::vector<std::unique_ptr<io::BinaryWriter>> writers;
    writers.reserve(parts);
    for (std::size_t p = 0; p < parts; ++p)
      writers.push_back(std::make_unique<io::BinaryWriter>(spill_dir / ("part-" + std::to_string(p) + ".bin"),
                                                           detail::kSpillMagic));
    StreamStats again;
    detail::for_each_parsed(ratings_path, opt, again, [&](const RatingRecord& r) {
      if (counts.find(r.user_id) == counts.end()) return;
      detail::write_spill(*writers[fnv1a(r.user_id) % parts], r);
    });
    for (auto& w : writers) w->close();
  }
  counts = {};

  // Partitions are disjoint in users, so each one's rows are final. They are
  // processed in waves of `threads` and written in partition order.
  io::CsvWriter csv(out_dir / "preference.csv", kQuarterHeader);
  io::BinaryWriter bin(out_dir / "preference.bin", kQuarterMagic);
  io::CsvWriter act(out_dir / "activity.csv", kActivityHeader);
  IngestResult result;
  result.partitions = parts;
  const unsigned wave = std::max(1u, opt.threads);
  for (std::size_t first = 0; first < parts; first += wave) {
    std::vector<std::future<detail::PartitionOutput>> tasks;
    for (std::size_t p = first; p < std::min(parts, first + wave); ++p) {
      auto path = spill_dir / ("part-" + std::to_string(p) + ".bin");
      tasks.push_back(std::async(wave > 1 ? std::launch::async : std::launch::deferred,
                                 [path, &rel] { return detail::process_partition(path, rel); }));
    }
    for (auto& t : tasks) {
      auto po = t.get();
      manifest.duplicates_dropped += po.duplicates;
      manifest.unmatched += po.table.unmatched;
      manifest.ratings_retained += po.table.ratings_used;
      write_quarter_rows_csv(csv, po.table.rows);
      write_quarter_rows_binary(bin, po.table.rows);
      write_activity_rows_csv(act, po.table.activity);
      result.preference_rows += po.table.rows.size();
      result.activity_rows += po.table.activity.size();
    }
  }
  csv.close();
  bin.close();
  act.close();
  io::fs::remove_all(spill_dir);

  result.manifest = manifest;
  io::write_file(out_dir / "filter_manifest.json", manifest.to_json().dump(2) + "\n");
  return result;
}

inline IngestResult run_ingest(const io::fs::path& ratings_path, const io::fs::path& meta_path,
                               const io::fs::path& out_dir, const IngestOptions& opt) {
  FilterManifest manifest;
  auto rel = prepare_relevance(meta_path, opt, manifest);
  return run_ingest(ratings_path, rel, out_dir, opt, manifest);
}

}  // namespace bte
