// Tests for the run-configuration text format: parsing with line-numbered
// diagnostics, typed getters, canonical serialization, and the content hash
// embedded in experiment outputs.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "amda/configfile.hpp"

using namespace amda;

TEST_CASE("hashing matches the published 64-bit FNV-1a vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  CHECK(hash_hex(0xcbf29ce484222325ULL) == "cbf29ce484222325");
  CHECK(hash_hex(0x1ULL) == "0000000000000001");
}

TEST_CASE("plain keys, sections, comments, and whitespace all parse") {
  ConfigFile cfg = ConfigFile::parse_string(
      "# top comment\n"
      "seed = 7\n"
      "\n"
      "[scenario]\n"
      "; another comment style\n"
      "  n_frames =  32 \n"
      "noise = 0.3\n"
      "\n"
      "[scenario.shift]\n"
      "angle = 1.0471975511965976\n");
  CHECK(cfg.get_int("seed") == 7);
  CHECK(cfg.get_int("scenario.n_frames") == 32);
  CHECK(cfg.get_double("scenario.noise") == 0.3);
  CHECK(cfg.get_double("scenario.shift.angle") ==
        doctest::Approx(1.0471975511965976).epsilon(1e-15));
  CHECK(cfg.has("scenario.noise"));
  CHECK_FALSE(cfg.has("scenario.missing"));
}

TEST_CASE("values may be empty and getters trim nothing further") {
  ConfigFile cfg = ConfigFile::parse_string("note =\npath = a b c\n");
  CHECK(cfg.get_string("note") == "");
  CHECK(cfg.get_string("path") == "a b c");
}

TEST_CASE("syntax errors cite the file and line number") {
  auto expect_line = [](const std::string& text, const std::string& needle) {
    try {
      ConfigFile::parse_string(text, "run.cfg");
      FAIL("expected a parse error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_line("a = 1\nb = 2\nnot a pair\n", "run.cfg:3");
  expect_line("[unterminated\n", "run.cfg:1");
  expect_line("a = 1\n[]\n", "run.cfg:2");
  expect_line("x = 1\nx = 2\n", "run.cfg:2");
  expect_line("x = 1\nx = 2\n", "duplicate");
  expect_line(" = 3\n", "run.cfg:1");
}

TEST_CASE("typed getters reject malformed values by key name") {
  ConfigFile cfg = ConfigFile::parse_string("a = fast\nb = 1.5\nc = maybe\n");
  CHECK_THROWS_AS(cfg.get_double("a"), ConfigError);
  CHECK_THROWS_AS(cfg.get_int("b"), ConfigError);
  CHECK_THROWS_AS(cfg.get_bool("c"), ConfigError);
  CHECK_THROWS_AS(cfg.get_string("nope"), ConfigError);
  try {
    cfg.get_int("b");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }
}

TEST_CASE("boolean spellings") {
  ConfigFile cfg = ConfigFile::parse_string(
      "a = true\nb = FALSE\nc = 1\nd = 0\ne = Yes\nf = off\n");
  CHECK(cfg.get_bool("a"));
  CHECK_FALSE(cfg.get_bool("b"));
  CHECK(cfg.get_bool("c"));
  CHECK_FALSE(cfg.get_bool("d"));
  CHECK(cfg.get_bool("e"));
  CHECK_FALSE(cfg.get_bool("f"));
}

TEST_CASE("fallback getters return defaults only when the key is absent") {
  ConfigFile cfg = ConfigFile::parse_string("present = 4\n");
  CHECK(cfg.get_int("present", 9) == 4);
  CHECK(cfg.get_int("absent", 9) == 9);
  CHECK(cfg.get_double("absent", 2.5) == 2.5);
  CHECK(cfg.get_string("absent", "dflt") == "dflt");
  CHECK(cfg.get_bool("absent", true));
}

TEST_CASE("serialization round-trips every entry") {
  ConfigFile cfg;
  cfg.set("top", "1");
  cfg.set("zeta", "last");
  cfg.set_double("train.lr", 0.001);
  cfg.set_int("train.epochs", 30);
  cfg.set_bool("train.verbose", false);
  cfg.set("scenario.shift.angle", "0.5");
  ConfigFile back = ConfigFile::parse_string(cfg.serialize());
  CHECK(back.keys() == cfg.keys());
  for (const std::string& k : cfg.keys())
    CHECK(back.get_string(k) == cfg.get_string(k));
  CHECK(back.hash() == cfg.hash());
}

TEST_CASE("the hash ignores comments, ordering, and spacing") {
  ConfigFile a = ConfigFile::parse_string(
      "[train]\nlr = 0.001\nepochs = 30\n[scenario]\nseed = 1\n");
  ConfigFile b = ConfigFile::parse_string(
      "# reordered and noisy\n[scenario]\nseed=1\n\n[train]\n"
      "epochs   =   30\n; note\nlr = 0.001\n");
  CHECK(a.hash() == b.hash());

  ConfigFile c = ConfigFile::parse_string(
      "[train]\nlr = 0.002\nepochs = 30\n[scenario]\nseed = 1\n");
  CHECK(a.hash() != c.hash());
}

TEST_CASE("floating-point values survive a set/serialize/get cycle exactly") {
  ConfigFile cfg;
  const double values[] = {0.1, 1.0 / 3.0, 6.02214076e23, -1e-300, 0.0};
  int i = 0;
  for (double v : values) cfg.set_double("k" + std::to_string(i++), v);
  ConfigFile back = ConfigFile::parse_string(cfg.serialize());
  i = 0;
  for (double v : values) CHECK(back.get_double("k" + std::to_string(i++)) == v);
}

TEST_CASE("file loading reports the path on parse errors and missing files") {
  const std::string path = "/tmp/amda_test_config.cfg";
  {
    std::ofstream out(path);
    out << "[run]\nseed = 11\nbroken line\n";
  }
  try {
    ConfigFile::parse_file(path);
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(path + ":3") != std::string::npos);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(ConfigFile::parse_file("/tmp/amda_no_such_file.cfg"),
                  IoError);
}
