#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rhetor/errors.hpp"
#include "rhetor/prompts.hpp"
#include "test_support.hpp"

using namespace rhetor;

TEST_CASE("render substitutes every occurrence of a slot") {
  PromptTemplate t{"t", "Compare {ref_a} with {ref_b}; again: {ref_a}."};
  const std::string out = t.render({{"ref_a", "ONE"}, {"ref_b", "TWO"}});
  CHECK(out == "Compare ONE with TWO; again: ONE.");
}

TEST_CASE("render leaves unknown braces untouched") {
  PromptTemplate t{"t", R"(json like {"rating": 7} and a slot {x})"};
  CHECK(t.render({{"x", "X"}}) == R"(json like {"rating": 7} and a slot X)");
}

TEST_CASE("render does not re-expand substituted values") {
  PromptTemplate t{"t", "{a} and {a}"};
  CHECK(t.render({{"a", "{a}"}}) == "{a} and {a}");
  CHECK(t.render({{"a", "{b}"}}) == "{b} and {b}");
}

TEST_CASE("render with an empty map is the identity") {
  PromptTemplate t{"t", "nothing {here} changes"};
  CHECK(t.render({}) == "nothing {here} changes");
}

TEST_CASE("require_slots accepts present slots") {
  PromptTemplate t{"t", "{mr_text} bounded by {min_wc} and {max_wc}"};
  CHECK_NOTHROW(t.require_slots({"mr_text", "min_wc", "max_wc"}));
}

TEST_CASE("require_slots names the missing slot") {
  PromptTemplate t{"t", "only {ref_a} here"};
  try {
    t.require_slots({"ref_a", "ref_b"});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("ref_b") != std::string::npos);
  }
}

TEST_CASE("load_template_file reads body and id") {
  testsupport::TempDir dir;
  const auto path = dir.path() / "judge.txt";
  testsupport::write_file(path, "Pick {ref_a} or {ref_b}.\n");
  const PromptTemplate t = load_template_file(path, "pairwise_v1");
  CHECK(t.id == "pairwise_v1");
  CHECK(t.body == "Pick {ref_a} or {ref_b}.\n");
}

TEST_CASE("load_template_file rejects missing and empty files") {
  testsupport::TempDir dir;
  CHECK_THROWS_AS(load_template_file(dir.path() / "absent.txt", "x"), ConfigError);
  const auto empty = dir.path() / "empty.txt";
  testsupport::write_file(empty, "");
  CHECK_THROWS_AS(load_template_file(empty, "x"), ConfigError);
}
