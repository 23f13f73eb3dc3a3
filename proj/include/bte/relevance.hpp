#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "bte/common.hpp"
#include "bte/io.hpp"
#include "bte/records.hpp"

namespace bte {

using CategoryId = std::uint32_t;

// Category labels interned in lexicographic order, so ids do not depend on
// the order in which items were read.
class CategoryIndex {
 public:
  CategoryIndex() = default;

  static CategoryIndex from_items(std::span<const ItemCategories> items) {
    std::vector<std::string> labels;
    for (const auto& it : items) labels.insert(labels.end(), it.categories.begin(), it.categories.end());
    return from_labels(std::move(labels));
  }

  static CategoryIndex from_labels(std::vector<std::string> labels) {
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    CategoryIndex idx;
    idx.names_ = std::move(labels);
    for (CategoryId i = 0; i < idx.names_.size(); ++i) idx.ids_.emplace(idx.names_[i], i);
    return idx;
  }

  [[nodiscard]] std::size_t size() const noexcept { return names_.size(); }
  [[nodiscard]] const std::string& name(CategoryId id) const { return names_.at(id); }
  [[nodiscard]] std::optional<CategoryId> find(std::string_view label) const {
    auto it = ids_.find(std::string(label));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  [[nodiscard]] CategoryId id(std::string_view label) const {
    if (auto f = find(label)) return *f;
    throw DataError("unknown category '" + std::string(label) + "'");
  }
  [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, CategoryId> ids_;
};

// Symmetric co-occurrence counts; N[i][i] is the number of items tagged i.
class CooccurrenceCounts {
 public:
  CooccurrenceCounts() = default;
  explicit CooccurrenceCounts(std::size_t n_categories) : rows_(n_categories) {}

  void add_item(std::span<const CategoryId> tags) {
    for (std::size_t a = 0; a < tags.size(); ++a)
      for (std::size_t b = 0; b < tags.size(); ++b) ++rows_.at(tags[a])[tags[b]];
  }

  // Monoid merge for shard-parallel counting.
  void merge(const CooccurrenceCounts& other) {
    if (rows_.size() < other.rows_.size()) rows_.resize(other.rows_.size());
    for (std::size_t i = 0; i < other.rows_.size(); ++i)
      for (const auto& [k, n] : other.rows_[i]) rows_[i][k] += n;
  }

  [[nodiscard]] std::uint64_t at(CategoryId i, CategoryId k) const {
    const auto& row = rows_.at(i);
    auto it = row.find(k);
    return it == row.end() ? 0 : it->second;
  }
  [[nodiscard]] std::uint64_t frequency(CategoryId i) const { return at(i, i); }
  [[nodiscard]] std::size_t size() const noexcept { return rows_.size(); }
  [[nodiscard]] const std::unordered_map<CategoryId, std::uint64_t>& row(CategoryId i) const { return rows_.at(i); }

  // Number of stored (i, k) entries, diagonal included.
  [[nodiscard]] std::size_t nonzeros() const {
    std::size_t n = 0;
    for (const auto& r : rows_) n += r.size();
    return n;
  }

 private:
  std::vector<std::unordered_map<CategoryId, std::uint64_t>> rows_;
};

inline std::vector<CategoryId> tag_ids(const ItemCategories& item, const CategoryIndex& index) {
  std::vector<CategoryId> ids;
  ids.reserve(item.categories.size());
  for (const auto& c : item.categories) ids.push_back(index.id(c));
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

inline CooccurrenceCounts count_cooccurrence(std::span<const ItemCategories> items, const CategoryIndex& index) {
  CooccurrenceCounts counts(index.size());
  for (const auto& it : items) {
    auto ids = tag_ids(it, index);
    counts.add_item(ids);
  }
  return counts;
}

// Relevance of `target` for an item carrying `tags`:
//   m = min(1, sum_k N[target][k] / sum_k N[k][k]),  k over the item's tags.
// A tag always co-tagged with the item's other tags scores 1; a category never
// seen alongside any of them scores 0.
inline double relevance_for_item(std::span<const CategoryId> tags, CategoryId target, const CooccurrenceCounts& n) {
  if (tags.empty()) throw DataError("relevance requested for an item without categories");
  if (target >= n.size()) throw DataError("relevance target outside the category index");
  std::uint64_t num = 0;
  std::uint64_t den = 0;
  for (CategoryId k : tags) {
    num += n.at(target, k);
    den += n.frequency(k);
  }
  if (num == 0 || den == 0) return 0.0;
  return std::min(1.0, static_cast<double>(num) / static_cast<double>(den));
}

struct RelevanceEntry {
  CategoryId category{0};
  double m{0.0};

  friend bool operator==(const RelevanceEntry&, const RelevanceEntry&) = default;
};

// Sparse item -> [(category, m > 0)] map. Rows are sorted by category id.
class RelevanceMatrix {
 public:
  RelevanceMatrix() = default;
  explicit RelevanceMatrix(CategoryIndex index) : index_(std::move(index)) {}

  void set_row(std::string item, std::vector<RelevanceEntry> row) {
    std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.category < b.category; });
    rows_.insert_or_assign(std::move(item), std::move(row));
  }

  [[nodiscard]] const std::vector<RelevanceEntry>* row(std::string_view item) const {
    auto it = rows_.find(std::string(item));
    return it == rows_.end() ? nullptr : &it->second;
  }

  [[nodiscard]] const CategoryIndex& categories() const noexcept { return index_; }
  [[nodiscard]] std::size_t items() const noexcept { return rows_.size(); }
  [[nodiscard]] std::size_t entries() const {
    std::size_t n = 0;
    for (const auto& [_, r] : rows_) n += r.size();
    return n;
  }

  // Item ids in sorted order (deterministic output).
  [[nodiscard]] std::vector<std::string> sorted_items() const {
    std::vector<std::string> ids;
    ids.reserve(rows_.size());
    for (const auto& [k, _] : rows_) ids.push_back(k);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

 private:
  CategoryIndex index_;
  std::unordered_map<std::string, std::vector<RelevanceEntry>> rows_;
};

// Scores every target with nonzero co-occurrence mass against the item's tags.
inline std::vector<RelevanceEntry> relevance_row(std::span<const CategoryId> tags, const CooccurrenceCounts& n) {
  std::vector<CategoryId> targets;
  for (CategoryId k : tags)
    for (const auto& [t, cnt] : n.row(k))
      if (cnt > 0) targets.push_back(t);
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  std::vector<RelevanceEntry> row;
  row.reserve(targets.size());
  for (CategoryId t : targets) {
    double m = relevance_for_item(tags, t, n);
    if (m > 0.0) row.push_back({t, m});
  }
  return row;
}

inline RelevanceMatrix build_relevance(std::span<const ItemCategories> items) {
  auto index = CategoryIndex::from_items(items);
  auto counts = count_cooccurrence(items, index);
  RelevanceMatrix rel(index);
  for (const auto& it : items) {
    if (it.categories.empty()) continue;
    auto ids = tag_ids(it, rel.categories());
    rel.set_row(it.item_id, relevance_row(ids, counts));
  }
  return rel;
}

// ---------------------------------------------------------------------------
// Triplet files: (item_id, category, m)

inline constexpr std::string_view kRelevanceMagic{"BTEREL1\n", 8};

inline void write_relevance_csv(const RelevanceMatrix& rel, const io::fs::path& path) {
  io::CsvWriter w(path, {"item_id", "category", "m"});
  for (const auto& item : rel.sorted_items())
    for (const auto& e : *rel.row(item)) w.field(item).field(rel.categories().name(e.category)).field(e.m).end_row();
  w.close();
}

inline void write_relevance_binary(const RelevanceMatrix& rel, const io::fs::path& path) {
  io::BinaryWriter w(path, kRelevanceMagic);
  for (const auto& item : rel.sorted_items())
    for (const auto& e : *rel.row(item)) {
      w.str(item);
      w.str(rel.categories().name(e.category));
      w.f64(e.m);
    }
  w.close();
}

namespace detail {
inline RelevanceMatrix assemble_relevance(std::vector<std::tuple<std::string, std::string, double>> triplets) {
  std::vector<std::string> labels;
  labels.reserve(triplets.size());
  for (const auto& t : triplets) labels.push_back(std::get<1>(t));
  RelevanceMatrix rel(CategoryIndex::from_labels(std::move(labels)));
  std::unordered_map<std::string, std::vector<RelevanceEntry>> rows;
  for (auto& [item, cat, m] : triplets) {
    if (!(m > 0.0 && m <= 1.0)) throw DataError("relevance score outside (0,1] for item " + item);
    rows[item].push_back({rel.categories().id(cat), m});
  }
  for (auto& [item, row] : rows) rel.set_row(item, std::move(row));
  return rel;
}
}  // namespace detail

inline RelevanceMatrix read_relevance_binary(const io::fs::path& path) {
  io::BinaryReader r(path, kRelevanceMagic);
  std::vector<std::tuple<std::string, std::string, double>> triplets;
  while (r.more()) {
    auto item = r.str();
    auto cat = r.str();
    triplets.emplace_back(std::move(item), std::move(cat), r.f64());
  }
  return detail::assemble_relevance(std::move(triplets));
}

inline RelevanceMatrix read_relevance_csv(const io::fs::path& path) {
  io::CsvReader r(path);
  auto ci = r.column("item_id"), cc = r.column("category"), cm = r.column("m");
  std::vector<std::tuple<std::string, std::string, double>> triplets;
  std::vector<std::string> f;
  while (r.next(f)) triplets.emplace_back(f[ci], f[cc], r.number(f, cm));
  return detail::assemble_relevance(std::move(triplets));
}

}  // namespace bte
