#include "doctest.h"

#include <random>

#include "eqdesc/desc_parser.hpp"
#include "eqdesc/verbalizer.hpp"

using namespace eqd;

namespace {

Expr v(char c) { return ex::var(c); }

DescriptionError::Kind error_kind(const std::string& text, std::size_t* pos = nullptr) {
  try {
    parse_description(text);
  } catch (const DescriptionError& e) {
    if (pos) *pos = e.position();
    return e.kind();
  }
  FAIL("no error for: " << text);
  return DescriptionError::Kind::Syntax;
}

}  // namespace

TEST_CASE("tokenizer") {
  auto toks = tokenize_description("x plus seven greater than ten");
  REQUIRE(toks.size() == 5);
  CHECK(toks[3].lexeme == "greater than");
  CHECK(toks[3].kind == TokenKind::RelationWord);
  CHECK(toks[4].position == 5);
  CHECK(tokenize_description("").empty());
  CHECK(tokenize_description("X Plus Y")[0].lexeme == "x");

  auto fused = tokenize_description("x greater than or equal to y with respect to");
  REQUIRE(fused.size() == 4);
  CHECK(fused[1].lexeme == "greater than or equal to");
  CHECK(fused[2].position == 6);
  CHECK(fused[3].kind == TokenKind::LimitWord);
}

TEST_CASE("unknown word is a lexical error") {
  std::size_t pos = 0;
  CHECK(error_kind("x qux y", &pos) == DescriptionError::Kind::Lexical);
  CHECK(pos == 1);
  CHECK(error_kind("x equal three") == DescriptionError::Kind::Lexical);
}

TEST_CASE("parses the scoping examples") {
  CHECK(expr_equal(parse_description("x plus y all over z"), ex::frac(ex::add(v('x'), v('y')), v('z'))));
  CHECK(expr_equal(parse_description("x all plus y over z"), ex::add(v('x'), ex::frac(v('y'), v('z')))));
  CHECK(expr_equal(parse_description("x plus y over z"), ex::add(v('x'), ex::frac(v('y'), v('z')))));
  CHECK(expr_equal(parse_description("integral of x with respect to x"),
                   ex::integral(v('x'), Variable::X)));
  CHECK(expr_equal(parse_description("second power of x"), ex::pow(v('x'), ex::constant(2))));
}

TEST_CASE("syntax errors carry positions") {
  std::size_t pos = 0;
  CHECK(error_kind("x plus y all", &pos) == DescriptionError::Kind::Syntax);
  CHECK(pos == 3);
  CHECK(error_kind("x plus", &pos) == DescriptionError::Kind::Syntax);
  CHECK(pos == 2);
  CHECK(error_kind("") == DescriptionError::Kind::Syntax);
  CHECK(error_kind("x greater than one and y equal to two") == DescriptionError::Kind::Syntax);
  CHECK(error_kind("limit of x as x approaches to") == DescriptionError::Kind::Syntax);
}

TEST_CASE("round trip over sampled equations") {
  std::mt19937_64 rng(20240601);
  for (int i = 0; i < 10000; ++i) {
    Expr e = sample_equation(kAllCategories[i % 7], rng, 1 + i % 5);
    const std::string text = verbalize(e).text;
    Expr back = parse_description(text);
    REQUIRE_MESSAGE(expr_equal(back, e), text << " -> " << to_canonical_string(back) << " vs "
                                              << to_canonical_string(e));
  }
}

TEST_CASE("fuzzed word sequences never crash") {
  std::vector<std::string> words(lexicon_words().begin(), lexicon_words().end());
  std::mt19937_64 rng(77);
  int parsed = 0;
  for (int i = 0; i < 20000; ++i) {
    std::string text;
    const auto n = 1 + uniform_below(rng, 12);
    for (std::uint64_t j = 0; j < n; ++j) {
      if (j) text += ' ';
      text += words[uniform_below(rng, words.size())];
    }
    try {
      parse_description(text);
      ++parsed;
    } catch (const DescriptionError&) {
    }
  }
  CHECK(parsed > 0);
}
