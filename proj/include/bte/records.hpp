#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "bte/common.hpp"
#include "bte/io.hpp"

namespace bte {

// One user's star rating of one item.
struct RatingRecord {
  std::string user_id;
  std::string item_id;
  int rating{0};            // 1..5
  std::int64_t timestamp{0};  // seconds since epoch, UTC

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

// Dataset epoch bounds: [1996-01-01, 2019-01-01) UTC.
inline constexpr std::int64_t kEpochBegin = 820454400;
inline constexpr std::int64_t kEpochEnd = 1546300800;

struct ItemCategories {
  std::string item_id;
  std::vector<std::string> categories;  // trimmed, deduplicated, sorted

  friend bool operator==(const ItemCategories&, const ItemCategories&) = default;
};

enum class RecordFormat { jsonl, csv };

inline RecordFormat parse_record_format(std::string_view tag) {
  if (tag == "jsonl" || tag == "json") return RecordFormat::jsonl;
  if (tag == "csv") return RecordFormat::csv;
  throw ConfigError("unknown record format '" + std::string(tag) + "' (expected jsonl or csv)");
}

// Input field names. Defaults follow the toolkit's own schema; the Amazon
// review dump uses reviewerID / asin / overall / unixReviewTime.
struct RatingFields {
  std::string user{"user"};
  std::string item{"item"};
  std::string rating{"rating"};
  std::string time{"time"};
};

struct MetaFields {
  std::string item{"item"};
  std::string categories{"categories"};
};

inline bool valid_record(const RatingRecord& r) noexcept {
  return !r.user_id.empty() && !r.item_id.empty() && r.rating >= 1 && r.rating <= 5 && r.timestamp >= kEpochBegin &&
         r.timestamp < kEpochEnd;
}

namespace detail {

inline bool json_to_string(const nlohmann::json& v, std::string& out) {
  if (v.is_string()) {
    out = v.get<std::string>();
    return true;
  }
  if (v.is_number_integer()) {
    out = std::to_string(v.get<std::int64_t>());
    return true;
  }
  return false;
}

// Accepts integers, integral floats ("5.0" style), and digit strings.
inline bool json_to_integer(const nlohmann::json& v, std::int64_t& out) {
  if (v.is_number_integer()) {
    out = v.get<std::int64_t>();
    return true;
  }
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (!std::isfinite(d) || d != std::floor(d)) return false;
    out = static_cast<std::int64_t>(d);
    return true;
  }
  if (v.is_string()) {
    auto s = v.get_ref<const std::string&>();
    if (auto p = parse_int<std::int64_t>(trim(s))) {
      out = *p;
      return true;
    }
    if (auto d = parse_double(trim(s)); d && *d == std::floor(*d)) {
      out = static_cast<std::int64_t>(*d);
      return true;
    }
  }
  return false;
}

inline bool text_to_integer(std::string_view s, std::int64_t& out) {
  s = trim(s);
  if (auto p = parse_int<std::int64_t>(s)) {
    out = *p;
    return true;
  }
  if (auto d = parse_double(s); d && std::isfinite(*d) && *d == std::floor(*d)) {
    out = static_cast<std::int64_t>(*d);
    return true;
  }
  return false;
}

}  // namespace detail

// Parses one JSON-lines rating. Returns false for malformed or out-of-range records.
inline bool parse_rating_json(std::string_view line, const RatingFields& f, RatingRecord& out) {
  auto doc = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return false;
  auto u = doc.find(f.user);
  auto i = doc.find(f.item);
  auto r = doc.find(f.rating);
  auto t = doc.find(f.time);
  if (u == doc.end() || i == doc.end() || r == doc.end() || t == doc.end()) return false;
  std::int64_t rating = 0;
  if (!detail::json_to_string(*u, out.user_id) || !detail::json_to_string(*i, out.item_id) ||
      !detail::json_to_integer(*r, rating) || !detail::json_to_integer(*t, out.timestamp))
    return false;
  if (rating < 1 || rating > 5) return false;
  out.rating = static_cast<int>(rating);
  return valid_record(out);
}

// Column positions for CSV rating input, resolved from the header row.
struct CsvColumns {
  std::size_t user{0}, item{1}, rating{2}, time{3}, width{4};

  static CsvColumns from_header(std::string_view header, const RatingFields& f) {
    std::vector<std::string> names;
    io::split_csv(header, names);
    auto find = [&](const std::string& n) {
      for (std::size_t k = 0; k < names.size(); ++k)
        if (trim(names[k]) == n) return k;
      throw ConfigError("CSV header lacks column '" + n + "'");
    };
    return CsvColumns{find(f.user), find(f.item), find(f.rating), find(f.time), names.size()};
  }
};

inline bool parse_rating_csv(std::string_view line, const CsvColumns& cols, RatingRecord& out,
                             std::vector<std::string>& scratch) {
  if (!io::split_csv(line, scratch) || scratch.size() != cols.width) return false;
  out.user_id.assign(trim(scratch[cols.user]));
  out.item_id.assign(trim(scratch[cols.item]));
  std::int64_t rating = 0;
  if (!detail::text_to_integer(scratch[cols.rating], rating) || rating < 1 || rating > 5) return false;
  out.rating = static_cast<int>(rating);
  if (!detail::text_to_integer(scratch[cols.time], out.timestamp)) return false;
  return valid_record(out);
}

// Per-stream tallies.
struct StreamStats {
  std::uint64_t lines{0};      // non-blank lines seen
  std::uint64_t malformed{0};  // lines that failed to parse or validate
  std::vector<std::uint64_t> malformed_lines;  // first few offending line numbers

  void note_malformed(std::uint64_t line_no) {
    ++malformed;
    if (malformed_lines.size() < 16) malformed_lines.push_back(line_no);
  }
};

// Pull-style iterator over the ratings in a record stream. Malformed lines are
// skipped and tallied in stats().
class RatingStream {
 public:
  RatingStream(io::LineReader reader, RecordFormat format, RatingFields fields)
      : reader_(std::move(reader)), format_(format), fields_(std::move(fields)) {
    if (format_ == RecordFormat::csv) {
      std::string_view header;
      if (reader_.next(header)) cols_ = CsvColumns::from_header(header, fields_);
    }
  }

  RatingStream(const io::fs::path& path, RecordFormat format, RatingFields fields = {})
      : RatingStream(io::LineReader(path), format, std::move(fields)) {}

  bool next(RatingRecord& out) {
    std::string_view line;
    while (reader_.next(line)) {
      if (trim(line).empty()) continue;
      ++stats_.lines;
      bool ok = format_ == RecordFormat::jsonl ? parse_rating_json(line, fields_, out)
                                               : parse_rating_csv(line, cols_, out, scratch_);
      if (ok) return true;
      stats_.note_malformed(reader_.line_number());
    }
    return false;
  }

  // Batch form used by the parallel pipeline: copies up to `max` raw lines.
  std::size_t next_lines(std::vector<std::string>& lines, std::vector<std::uint64_t>& line_numbers, std::size_t max) {
    lines.clear();
    line_numbers.clear();
    std::string_view line;
    while (lines.size() < max && reader_.next(line)) {
      if (trim(line).empty()) continue;
      lines.emplace_back(line);
      line_numbers.push_back(reader_.line_number());
    }
    stats_.lines += lines.size();
    return lines.size();
  }

  bool parse(std::string_view line, RatingRecord& out, std::vector<std::string>& scratch) const {
    return format_ == RecordFormat::jsonl ? parse_rating_json(line, fields_, out)
                                          : parse_rating_csv(line, cols_, out, scratch);
  }

  StreamStats& stats() noexcept { return stats_; }
  [[nodiscard]] const StreamStats& stats() const noexcept { return stats_; }

 private:
  io::LineReader reader_;
  RecordFormat format_;
  RatingFields fields_;
  CsvColumns cols_{};
  std::vector<std::string> scratch_;
  StreamStats stats_;
};

// Canonicalizes a label list: trims, drops empties, deduplicates (case-preserving).
inline std::vector<std::string> canonical_categories(std::vector<std::string> labels) {
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (auto& l : labels) {
    auto t = trim(l);
    if (!t.empty()) out.emplace_back(t);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct MetadataStats {
  std::uint64_t lines{0};
  std::uint64_t malformed{0};
  std::uint64_t empty{0};       // items whose category set was empty after cleaning
  std::uint64_t duplicates{0};  // repeated item ids (tag sets merged)
};

// Reads item metadata (JSON lines). Category arrays may be flat or nested one
// level (the Amazon dump nests category paths); nested arrays are flattened.
inline std::vector<ItemCategories> read_metadata(io::LineReader reader, const MetaFields& f, MetadataStats& stats) {
  std::vector<ItemCategories> items;
  std::unordered_map<std::string, std::size_t> seen;
  std::string_view line;
  while (reader.next(line)) {
    if (trim(line).empty()) continue;
    ++stats.lines;
    auto doc = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      ++stats.malformed;
      continue;
    }
    auto it = doc.find(f.item);
    auto cats = doc.find(f.categories);
    std::string id;
    if (it == doc.end() || !detail::json_to_string(*it, id) || trim(id).empty() || cats == doc.end() ||
        !cats->is_array()) {
      ++stats.malformed;
      continue;
    }
    std::vector<std::string> labels;
    for (const auto& c : *cats) {
      if (c.is_string()) {
        labels.push_back(c.get<std::string>());
      } else if (c.is_array()) {
        for (const auto& cc : c)
          if (cc.is_string()) labels.push_back(cc.get<std::string>());
      }
    }
    labels = canonical_categories(std::move(labels));
    id = std::string(trim(id));
    if (auto s = seen.find(id); s != seen.end()) {
      ++stats.duplicates;
      auto& merged = items[s->second].categories;
      merged.insert(merged.end(), labels.begin(), labels.end());
      merged = canonical_categories(std::move(merged));
      continue;
    }
    seen.emplace(id, items.size());
    items.push_back(ItemCategories{std::move(id), std::move(labels)});
  }
  std::erase_if(items, [&](const ItemCategories& ic) {
    if (!ic.categories.empty()) return false;
    ++stats.empty;
    return true;
  });
  return items;
}

inline std::vector<ItemCategories> read_metadata(const io::fs::path& path, const MetaFields& f, MetadataStats& stats) {
  return read_metadata(io::LineReader(path), f, stats);
}

}  // namespace bte
