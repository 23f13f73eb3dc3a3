#include <gtest/gtest.h>
#include <zlib.h>

#include <random>

#include "bte/config.hpp"
#include "bte/io.hpp"
#include "bte/stats.hpp"
#include "oracles.hpp"

using namespace bte;

TEST(Quarter, IndexRoundTripAndOrdering) {
  for (std::int64_t i = 7000; i < 8200; ++i) EXPECT_EQ(Quarter::from_index(i).index(), i);
  EXPECT_LT(Quarter(1998, 4), Quarter(1999, 1));
  EXPECT_EQ(Quarter(2008, 3).index() - Quarter(2008, 1).index(), 2);
  EXPECT_THROW(Quarter(2000, 5), std::invalid_argument);
}

TEST(Quarter, FromUnixUsesUtcCalendarQuarters) {
  EXPECT_EQ(Quarter::from_unix(915148800), Quarter(1999, 1));  // 1999-01-01T00:00:00Z
  EXPECT_EQ(Quarter::from_unix(930787199), Quarter(1999, 2));  // 1999-06-30T23:59:59Z
  EXPECT_EQ(Quarter::from_unix(930787200), Quarter(1999, 3));  // 1999-07-01T00:00:00Z
  for (int y = 1996; y < 2019; ++y)
    for (int q = 1; q <= 4; ++q) {
      Quarter x(y, q);
      EXPECT_EQ(Quarter::from_unix(x.start_unix()), x);
      EXPECT_EQ(Quarter::from_unix(x.start_unix() - 1), Quarter::from_index(x.index() - 1));
    }
}

TEST(Quarter, YearsSinceOrigin) {
  EXPECT_DOUBLE_EQ(years_since(Quarter(1998, 1)), 0.0);
  EXPECT_DOUBLE_EQ(years_since(Quarter(2008, 2)), 10.25);
}

TEST(Quarter, Parse) {
  EXPECT_EQ(parse_quarter("2008Q2"), Quarter(2008, 2));
  EXPECT_FALSE(parse_quarter("2008Q5").has_value());
  EXPECT_FALSE(parse_quarter("junk").has_value());
}

TEST(Text, TrimAndNumbers) {
  EXPECT_EQ(trim("  a b \t"), "a b");
  EXPECT_EQ(trim(""), "");
  EXPECT_EQ(parse_double(" 2.5 "), 2.5);
  EXPECT_FALSE(parse_double("x").has_value());
  EXPECT_EQ(parse_int<int>("42"), 42);
  EXPECT_FALSE(parse_int<int>("4.2").has_value());
}

TEST(Io, LineReaderPlainAndGzipAgree) {
  oracle::TempDir tmp("io");
  std::string text;
  for (int i = 0; i < 50000; ++i) text += "line " + std::to_string(i) + (i % 7 == 0 ? "\r\n" : "\n");
  text += "last-without-newline";
  io::write_file(tmp / "plain.txt", text);
  gzFile gz = gzopen((tmp / "packed.gz").string().c_str(), "wb");
  gzwrite(gz, text.data(), static_cast<unsigned>(text.size()));
  gzclose(gz);

  auto collect = [](io::LineReader r) {
    std::vector<std::string> out;
    std::string_view l;
    while (r.next(l)) out.emplace_back(l);
    return out;
  };
  auto a = collect(io::LineReader(tmp / "plain.txt"));
  auto b = collect(io::LineReader(tmp / "packed.gz"));
  auto c = collect(io::LineReader::from_string(text));
  ASSERT_EQ(a.size(), 50001u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_EQ(a[7], "line 7");
  EXPECT_EQ(a.back(), "last-without-newline");
}

TEST(Io, MissingFileIsDataError) { EXPECT_THROW(io::LineReader(io::fs::path("/nonexistent/file")), DataError); }

TEST(Io, CsvQuotingRoundTrip) {
  std::vector<std::string> fields = {"plain", "with,comma", "with \"quote\"", "", "tail"};
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    io::append_csv_field(line, fields[i]);
  }
  std::vector<std::string> back;
  ASSERT_TRUE(io::split_csv(line, back));
  EXPECT_EQ(back, fields);
  EXPECT_FALSE(io::split_csv("\"open", back));
}

TEST(Io, Sha256KnownVector) {
  oracle::TempDir tmp("sha");
  io::write_file(tmp / "abc", "abc");
  EXPECT_EQ(io::sha256_file(tmp / "abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Config, ParsesCommentsQuotesAndTypes) {
  auto c = FlatConfig::parse(
      "# header\n"
      "seed = 7   # trailing\n"
      "name = \"a # not a comment\"\n"
      "\n"
      "ratio=0.25\n"
      "flag = yes\n");
  EXPECT_EQ(c.get_uint("seed", 0), 7u);
  EXPECT_EQ(c.get_string("name", ""), "a # not a comment");
  EXPECT_DOUBLE_EQ(c.get_double("ratio", 0), 0.25);
  EXPECT_TRUE(c.get_bool("flag", false));
  EXPECT_EQ(c.get_int("absent", -3), -3);
  EXPECT_EQ(c.canonical(), "flag = yes\nname = a # not a comment\nratio = 0.25\nseed = 7\n");
}

TEST(Config, Errors) {
  EXPECT_THROW(FlatConfig::parse("no equals sign"), ConfigError);
  EXPECT_THROW(FlatConfig::parse(" = 3"), ConfigError);
  auto c = FlatConfig::parse("a = x\nb = -1\n");
  EXPECT_THROW((void)c.get_double("a", 0), ConfigError);
  EXPECT_THROW((void)c.get_uint("b", 0), ConfigError);
  EXPECT_THROW((void)c.get_bool("a", false), ConfigError);
  constexpr std::string_view allowed[] = {"a"};
  EXPECT_THROW(c.require_known(allowed), ConfigError);
  EXPECT_THROW(FlatConfig::load("/nonexistent.cfg"), ConfigError);
}

TEST(Stats, SampleVarianceAndScores) {
  std::vector<double> v = {1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(stats::mean(v), 3.0);
  EXPECT_DOUBLE_EQ(stats::variance(v), 2.5);
  auto z = stats::normal_scores(4);
  EXPECT_NEAR(z[0], stats::normal_quantile(0.125), 1e-15);
  EXPECT_NEAR(z[0], -z[3], 1e-12);
  EXPECT_NEAR(stats::normal_quantile(0.975), 1.959963984540054, 1e-12);
}

TEST(Stats, PValues) {
  EXPECT_NEAR(stats::normal_two_sided_p(1.959963984540054), 0.05, 1e-12);
  EXPECT_NEAR(stats::t_two_sided_p(2.228138851986274, 10), 0.05, 1e-9);
  EXPECT_NEAR(stats::t_two_sided_p(1.5, 1e7), stats::normal_two_sided_p(1.5), 1e-6);
}

TEST(Stats, SlopeTestMatchesClosedForm) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  std::vector<double> x, y;
  for (int i = 0; i < 200; ++i) {
    x.push_back(i * 0.1);
    y.push_back(1.0 + 0.5 * x.back() + n01(rng));
  }
  auto r = stats::slope_test(x, y);
  Eigen::MatrixXd X(200, 2);
  Eigen::VectorXd Y(200);
  for (int i = 0; i < 200; ++i) {
    X(i, 0) = 1;
    X(i, 1) = x[i];
    Y(i) = y[i];
  }
  auto b = oracle::ols(X, Y);
  EXPECT_NEAR(r.intercept, b(0), 1e-10);
  EXPECT_NEAR(r.slope, b(1), 1e-10);
  Eigen::VectorXd e = Y - X * b;
  const double s2 = e.squaredNorm() / 198.0;
  EXPECT_NEAR(r.se, std::sqrt(s2 * (X.transpose() * X).inverse()(1, 1)), 1e-10);
  EXPECT_LT(r.p, 1e-10);
  EXPECT_THROW(stats::slope_test(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), DataError);
}
