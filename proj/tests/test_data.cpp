#include "doctest.h"

#include "cpflow/config.hpp"
#include "cpflow/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "cpflow/errors.hpp"
#include "cpflow/rng.hpp"

using namespace cpflow;

namespace {

std::string temp_path(const char* stem) {
  return std::string("./") + stem + ".tmp";
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

bool message_contains(const std::exception& e, const char* needle) {
  return std::string(e.what()).find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("csv parses rectangular numeric text") {
  ArrayValue a = parse_csv_text("1.0,2.0\n3.0,4.0", false, "mem");
  REQUIRE(a.rows() == 2);
  REQUIRE(a.cols() == 2);
  CHECK(a.at(0) == 1.0);
  CHECK(a.at(1) == 2.0);
  CHECK(a.at(2) == 3.0);
  CHECK(a.at(3) == 4.0);

  // Trailing newline, CRLF endings, and padded fields are all tolerated.
  ArrayValue b = parse_csv_text("1, -2.5e3\r\n0.25 ,\t7\r\n", false, "mem");
  REQUIRE(b.rows() == 2);
  CHECK(b.at(1) == -2.5e3);
  CHECK(b.at(2) == 0.25);
  CHECK(b.at(3) == 7.0);

  ArrayValue c = parse_csv_text("x1,x2\n1,2\n", true, "mem");
  REQUIRE(c.rows() == 1);
  REQUIRE(c.cols() == 2);
  CHECK(c.at(0) == 1.0);

  // A header with no data rows still fixes the width.
  ArrayValue d = parse_csv_text("x1,x2,x3\n", true, "mem");
  CHECK(d.rows() == 0);
  CHECK(d.cols() == 3);
}

TEST_CASE("csv errors carry the line number") {
  CHECK_THROWS_WITH_AS(parse_csv_text("1,2\n3\n", false, "mem"),
                       doctest::Contains("line 2"), ParseError);
  CHECK_THROWS_WITH_AS(parse_csv_text("1,foo\n", false, "mem"),
                       doctest::Contains("line 1"), ParseError);
  CHECK_THROWS_WITH_AS(parse_csv_text("1,foo\n", false, "mem"),
                       doctest::Contains("foo"), ParseError);
  CHECK_THROWS_WITH_AS(parse_csv_text("1,2\n\n3,4\n", false, "mem"),
                       doctest::Contains("line 2"), ParseError);
  CHECK_THROWS_WITH_AS(parse_csv_text("1,,2\n", false, "mem"),
                       doctest::Contains("empty field"), ParseError);
  CHECK_THROWS_AS(parse_csv_text("", false, "mem"), ParseError);
  CHECK_THROWS_AS(parse_csv_text("\n", false, "mem"), ParseError);
  // Number with trailing junk is non-numeric, not silently truncated.
  CHECK_THROWS_AS(parse_csv_text("1.5x,2\n", false, "mem"), ParseError);
  CHECK_THROWS_AS(load_csv("./no_such_file.csv", false), ParseError);
}

TEST_CASE("csv write and load round-trips doubles bit for bit") {
  Rng rng(411);
  const long n = 40, d = 3;
  std::vector<double> vals(static_cast<size_t>(n * d));
  for (size_t i = 0; i < vals.size(); ++i) {
    // Mix magnitudes so the formatter's full range is exercised.
    double scale = std::pow(10.0, std::floor(rng.uniform() * 60.0) - 30.0);
    vals[i] = rng.normal() * scale;
  }
  vals[0] = 0.0;
  vals[1] = -0.0;
  vals[2] = std::numeric_limits<double>::quiet_NaN();
  vals[3] = 1e308;
  vals[4] = 5e-324;  // smallest subnormal
  ArrayValue rows = ArrayValue::from({n, d}, vals);

  const std::string path = temp_path("roundtrip");
  write_csv(path, {"a", "b", "c"}, rows);
  ArrayValue back = load_csv(path, true);
  REQUIRE(back.rows() == n);
  REQUIRE(back.cols() == d);
  for (long i = 0; i < back.size(); ++i) {
    double want = vals[static_cast<size_t>(i)];
    double got = back.at(i);
    if (std::isnan(want)) {
      CHECK(std::isnan(got));
    } else {
      CHECK(got == want);
      CHECK(std::signbit(got) == std::signbit(want));
    }
  }
  std::remove(path.c_str());

  CHECK_THROWS_AS(write_csv(path, {"a", "b"}, rows), ContractError);
}

TEST_CASE("config parses key = value with comments") {
  Config cfg = Config::from_text(
      "# run settings\n"
      "epochs = 12\n"
      "lr=0.005   # inline comment\n"
      "name = eight_gaussians\n"
      "flag = true\n"
      "\n",
      "mem");
  CHECK(cfg.get_long("epochs", -1) == 12);
  CHECK(cfg.get_double("lr", 0.0) == 0.005);
  CHECK(cfg.get_string("name", "") == "eight_gaussians");
  CHECK(cfg.get_bool("flag", false));
  CHECK(cfg.get_long("absent", 7) == 7);
  CHECK_FALSE(cfg.has("absent"));
  CHECK_THROWS_AS(cfg.get_string_required("absent"), ParseError);
}

TEST_CASE("config rejects malformed lines and bad values") {
  CHECK_THROWS_WITH_AS(Config::from_text("epochs\n", "mem"), doctest::Contains("line 1"),
                       ParseError);
  CHECK_THROWS_WITH_AS(Config::from_text("ok = 1\n= 3\n", "mem"),
                       doctest::Contains("line 2"), ParseError);
  Config cfg = Config::from_text("a = 1.5\nb = yes\n", "mem");
  CHECK_THROWS_WITH_AS(cfg.get_long("a", 0), doctest::Contains("'a'"), ParseError);
  CHECK_THROWS_WITH_AS(cfg.get_bool("b", false), doctest::Contains("'b'"), ParseError);
}

TEST_CASE("config flags unknown keys by name") {
  Config cfg = Config::from_text("batch_size = 128\nbtach_size = 64\n", "mem");
  try {
    cfg.require_known({"batch_size", "epochs"});
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(message_contains(e, "btach_size"));
  }
  CHECK_NOTHROW(cfg.require_known({"batch_size", "btach_size"}));
}

TEST_CASE("config set overwrites in place and serializes losslessly") {
  Config cfg;
  cfg.set_long("epochs", 3);
  cfg.set_double("lr", 0.1);
  cfg.set("epochs", "9");  // overwrite keeps position
  CHECK(cfg.entries().size() == 2);
  CHECK(cfg.entries()[0].first == "epochs");
  CHECK(cfg.get_long("epochs", 0) == 9);

  // Doubles survive a serialize/parse cycle bit for bit.
  const double pi = 3.14159265358979323846;
  const double tiny = 5e-324;
  cfg.set_double("pi", pi);
  cfg.set_double("tiny", tiny);
  cfg.set_u64("seed", 0xffffffffffffffffull);
  Config back = Config::from_text(cfg.serialize(), "mem");
  CHECK(back.get_double("pi", 0.0) == pi);
  CHECK(back.get_double("tiny", 0.0) == tiny);
  CHECK(back.get_u64("seed", 0) == 0xffffffffffffffffull);
  CHECK(back.get_long("epochs", 0) == 9);

  const std::string path = temp_path("config");
  write_file(path, cfg.serialize());
  Config from_disk = Config::from_file(path);
  CHECK(from_disk.serialize() == cfg.serialize());
  std::remove(path.c_str());
  CHECK_THROWS_AS(Config::from_file("./no_such.cfg"), ParseError);
}
