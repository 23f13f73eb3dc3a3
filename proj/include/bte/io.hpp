#pragma once

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bte/common.hpp"

namespace bte::io {

namespace fs = std::filesystem;

// Reads newline-delimited records from a plain or gzip-compressed file, or from
// an in-memory buffer. Compression is detected from the stream header, not the
// file name.
class LineReader {
 public:
  explicit LineReader(const fs::path& path) {
    gz_ = gzopen(path.string().c_str(), "rb");
    if (gz_ == nullptr) throw DataError("cannot open input: " + path.string());
    gzbuffer(gz_, 1 << 18);
  }

  static LineReader from_string(std::string content) { return LineReader(std::move(content)); }

  LineReader(LineReader&& other) noexcept
      : gz_(std::exchange(other.gz_, nullptr)),
        buf_(std::move(other.buf_)),
        begin_(other.begin_),
        end_(other.end_),
        eof_(other.eof_),
        line_number_(other.line_number_) {}
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;
  LineReader& operator=(LineReader&&) = delete;

  ~LineReader() {
    if (gz_ != nullptr) gzclose(gz_);
  }

  // The returned view is valid until the next call.
  bool next(std::string_view& line) {
    for (;;) {
      const char* b = buf_.data() + begin_;
      const char* nl = static_cast<const char*>(std::memchr(b, '\n', end_ - begin_));
      if (nl != nullptr) {
        std::size_t len = static_cast<std::size_t>(nl - b);
        line = std::string_view(b, len);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        begin_ += len + 1;
        ++line_number_;
        return true;
      }
      if (eof_) {
        if (begin_ == end_) return false;
        line = std::string_view(b, end_ - begin_);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        begin_ = end_;
        ++line_number_;
        return true;
      }
      fill();
    }
  }

  [[nodiscard]] std::uint64_t line_number() const noexcept { return line_number_; }

 private:
  explicit LineReader(std::string content) : buf_(std::move(content)), end_(buf_.size()), eof_(true) {}

  void fill() {
    if (begin_ > 0) {
      std::memmove(buf_.data(), buf_.data() + begin_, end_ - begin_);
      end_ -= begin_;
      begin_ = 0;
    }
    if (buf_.size() - end_ < kChunk) buf_.resize(std::max(buf_.size() * 2, end_ + kChunk));
    int n = gzread(gz_, buf_.data() + end_, static_cast<unsigned>(buf_.size() - end_));
    if (n < 0) {
      int err = 0;
      throw DataError(std::string("read error: ") + gzerror(gz_, &err));
    }
    if (n == 0) eof_ = true;
    end_ += static_cast<std::size_t>(n);
  }

  static constexpr std::size_t kChunk = 1 << 20;
  gzFile gz_{nullptr};
  std::string buf_;
  std::size_t begin_{0};
  std::size_t end_{0};
  bool eof_{false};
  std::uint64_t line_number_{0};
};

// ---------------------------------------------------------------------------
// CSV (RFC 4180 quoting for fields containing separators or quotes)

inline void append_csv_field(std::string& out, std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) {
    out.append(field);
    return;
  }
  out.push_back('"');
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
}

// Splits one CSV line. Embedded newlines inside quotes are not supported.
inline bool split_csv(std::string_view line, std::vector<std::string>& fields) {
  fields.clear();
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return !quoted;
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, std::span<const std::string_view> header) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write: " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) line_.push_back(',');
      append_csv_field(line_, header[i]);
    }
    flush_line();
  }
  CsvWriter(const fs::path& path, std::initializer_list<std::string_view> header)
      : CsvWriter(path, std::span<const std::string_view>(header.begin(), header.size())) {}

  CsvWriter& field(std::string_view s) {
    sep();
    append_csv_field(line_, s);
    return *this;
  }
  CsvWriter& field(double v) {
    sep();
    line_ += format_double(v);
    return *this;
  }
  template <class Int>
    requires std::is_integral_v<Int>
  CsvWriter& field(Int v) {
    sep();
    line_ += std::to_string(v);
    return *this;
  }
  void end_row() { flush_line(); }

  void close() {
    out_.write(pending_.data(), static_cast<std::streamsize>(pending_.size()));
    pending_.clear();
    out_.close();
    if (!out_) throw DataError("write failed");
  }
  ~CsvWriter() {
    if (out_.is_open()) out_.write(pending_.data(), static_cast<std::streamsize>(pending_.size()));
  }

 private:
  void sep() {
    if (!first_) line_.push_back(',');
    first_ = false;
  }
  void flush_line() {
    line_.push_back('\n');
    pending_ += line_;
    line_.clear();
    first_ = true;
    if (pending_.size() > (1 << 20)) {
      out_.write(pending_.data(), static_cast<std::streamsize>(pending_.size()));
      pending_.clear();
    }
  }

  std::ofstream out_;
  std::string line_;
  std::string pending_;
  bool first_{true};
};

// Reads a CSV with a header row; columns are looked up by name.
class CsvReader {
 public:
  explicit CsvReader(const fs::path& path) : reader_(path), path_(path.string()) {
    std::string_view line;
    if (!reader_.next(line)) throw DataError("empty CSV: " + path_);
    split_csv(line, header_);
  }

  [[nodiscard]] std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
      if (header_[i] == name) return i;
    throw DataError(path_ + ": missing column '" + std::string(name) + "'");
  }

  [[nodiscard]] bool has_column(std::string_view name) const {
    return std::find(header_.begin(), header_.end(), name) != header_.end();
  }

  bool next(std::vector<std::string>& fields) {
    std::string_view line;
    while (reader_.next(line)) {
      if (trim(line).empty()) continue;
      if (!split_csv(line, fields) || fields.size() != header_.size())
        throw DataError(path_ + ": malformed row at line " + std::to_string(reader_.line_number()));
      return true;
    }
    return false;
  }

  [[nodiscard]] std::uint64_t line_number() const noexcept { return reader_.line_number(); }
  [[nodiscard]] const std::string& path() const noexcept { return path_; }

  double number(const std::vector<std::string>& f, std::size_t col) const {
    auto v = parse_double(f[col]);
    if (!v) throw DataError(path_ + ": non-numeric '" + f[col] + "' at line " + std::to_string(line_number()));
    return *v;
  }
  template <class Int>
  Int integer(const std::vector<std::string>& f, std::size_t col) const {
    auto v = parse_int<Int>(f[col]);
    if (!v) throw DataError(path_ + ": non-integer '" + f[col] + "' at line " + std::to_string(line_number()));
    return *v;
  }

 private:
  LineReader reader_;
  std::string path_;
  std::vector<std::string> header_;
};

// ---------------------------------------------------------------------------
// Length-prefixed little-endian binary records.

class BinaryWriter {
 public:
  BinaryWriter(const fs::path& path, std::string_view magic) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write: " + path.string());
    out_.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  }

  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void u32(std::uint32_t v) { raw(v); }
  void i32(std::int32_t v) { raw(v); }
  void u64(std::uint64_t v) { raw(v); }
  void i64(std::int64_t v) { raw(v); }
  void f64(double v) { raw(std::bit_cast<std::uint64_t>(v)); }

  void close() {
    out_.close();
    if (!out_) throw DataError("binary write failed");
  }

 private:
  template <class T>
  void raw(T v) {
    static_assert(std::endian::native == std::endian::little, "binary format assumes a little-endian host");
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  std::ofstream out_;
};

class BinaryReader {
 public:
  BinaryReader(const fs::path& path, std::string_view magic) : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw DataError("cannot open: " + path_);
    std::string got(magic.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (!in_ || got != magic) throw DataError(path_ + ": bad binary header");
  }

  // True when another record starts here.
  bool more() { return in_.peek() != std::char_traits<char>::eof(); }

  std::string str() {
    auto n = u32();
    std::string s(n, '\0');
    in_.read(s.data(), n);
    check();
    return s;
  }
  std::uint32_t u32() { return raw<std::uint32_t>(); }
  std::int32_t i32() { return raw<std::int32_t>(); }
  std::uint64_t u64() { return raw<std::uint64_t>(); }
  std::int64_t i64() { return raw<std::int64_t>(); }
  double f64() { return std::bit_cast<double>(raw<std::uint64_t>()); }

 private:
  template <class T>
  T raw() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    check();
    return v;
  }
  void check() {
    if (!in_) throw DataError(path_ + ": truncated binary record");
  }
  std::ifstream in_;
  std::string path_;
};

// ---------------------------------------------------------------------------
// Content digests

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  }
  void update(std::string_view data) { EVP_DigestUpdate(ctx_.get(), data.data(), data.size()); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 0xF]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot digest: " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return h.hex();
}

inline std::string sha256_string(std::string_view s) {
  Sha256 h;
  h.update(s);
  return h.hex();
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read: " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("cannot write: " + path.string());
}

}  // namespace bte::io
