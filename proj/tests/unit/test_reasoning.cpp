#include "memloom/reasoning.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace memloom;

TEST_CASE("strong grammar", "[reasoning]") {
  const auto ok = parse_strong("<reasoning> step one </reasoning>\nThe answer.");
  REQUIRE(ok);
  CHECK(ok->reasoning == "step one");
  CHECK(ok->answer == "The answer.");

  CHECK_FALSE(parse_strong("no reasoning at all"));
  CHECK_FALSE(parse_strong("<reasoning></reasoning>answer"));
  CHECK_FALSE(parse_strong("<reasoning>r</reasoning>"));
  CHECK_FALSE(parse_strong("<reasoning>a<reasoning>b</reasoning>c"));
  CHECK_FALSE(parse_strong("<reasoning>r</reasoning>x</reasoning>"));
  CHECK_FALSE(parse_strong("prefix <reasoning>r</reasoning>answer"));

  const auto rendered = render_strong("why", "what");
  REQUIRE(parse_strong(rendered));
  CHECK(parse_strong(rendered)->answer == "what");
}

TEST_CASE("strip_reasoning removes a leading block", "[reasoning]") {
  const auto r = strip_reasoning("<reasoning>think</reasoning>\nanswer");
  CHECK(r.text == "answer");
  CHECK(r.stripped);
  CHECK_FALSE(r.malformed);

  const auto plain = strip_reasoning("just text");
  CHECK(plain.text == "just text");
  CHECK_FALSE(plain.stripped);

  const auto bad = strip_reasoning("a</reasoning>b<reasoning>c");
  CHECK(bad.malformed);
  CHECK_FALSE(contains_reasoning_delimiter(bad.text));
}

TEST_CASE("strip_reasoning is idempotent and delimiter-free on random input", "[reasoning]") {
  std::mt19937_64 rng(7);
  const std::vector<std::string> atoms{"<reasoning>", "</reasoning>", "a", " ", "\n", "<reas", "oning>", "x y", "</"};
  for (int i = 0; i < 500; ++i) {
    std::string s;
    const int n = static_cast<int>(rng() % 12);
    for (int k = 0; k < n; ++k) s += atoms[rng() % atoms.size()];
    const auto once = strip_reasoning(s);
    INFO(s);
    CHECK_FALSE(contains_reasoning_delimiter(once.text));
    CHECK(strip_reasoning(once.text).text == once.text);
  }
}
