#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "eqdesc/metrics.hpp"

using namespace eqd;

namespace {

std::vector<std::vector<Tokens>> single(const std::vector<std::string>& refs) {
  std::vector<std::vector<Tokens>> out;
  for (const auto& r : refs) out.push_back({split_words(r)});
  return out;
}

std::vector<Tokens> words(const std::vector<std::string>& s) {
  std::vector<Tokens> out;
  for (const auto& x : s) out.push_back(split_words(x));
  return out;
}

const std::vector<std::string> kToyRefs = {"x plus y equal to two", "x minus y equal to two",
                                           "x plus y greater than two"};
const std::vector<std::string> kToyCands = {"x plus y equal to two", "x minus y equal to three",
                                            "y plus x greater than two"};

}  // namespace

TEST_CASE("identity candidates score one everywhere") {
  std::vector<std::string> refs = {"x plus y equal to two", "integral of x with respect to x",
                                   "the limit of x as x approaches zero", "z over two greater than y"};
  auto c = words(refs);
  auto r = single(refs);
  for (int n = 1; n <= 4; ++n) CHECK(bleu(c, r, n) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rouge_l(c, r) == doctest::Approx(1.0).epsilon(1e-12));
  for (double s : cider_scores(c, r)) CHECK(std::abs(s - 1.0) < 1e-9);
}

TEST_CASE("bleu brevity penalty example") {
  double b1 = bleu({split_words("x plus y")}, single({"x plus y all over z"}), 1);
  CHECK(std::abs(b1 - std::exp(-1.0)) < 1e-12);
  // no 4-grams in a three word candidate
  CHECK(bleu({split_words("x plus y")}, single({"x plus y all over z"}), 4) == 0.0);
  CHECK(bleu({Tokens{}}, single({"x plus y"}), 1) == 0.0);
}

TEST_CASE("bleu clips repeated n-grams") {
  // "x x x x" against "x plus x": x is matched at most twice
  double b1 = bleu({split_words("x x x x")}, single({"x plus x"}), 1);
  CHECK(b1 == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("rouge-l example") {
  double r = rouge_l({split_words("x over z")}, single({"x plus y all over z"}));
  // LCS 3, P 1, R 1/2, beta 1.2
  CHECK(std::abs(r - 0.6288659793814433) < 1e-9);
  CHECK(rouge_l({split_words("a b")}, single({"c d"})) == 0.0);
}

TEST_CASE("cider toy corpus") {
  auto s = cider_scores(words(kToyCands), single(kToyRefs));
  REQUIRE(s.size() == 3);
  CHECK(std::abs(s[0] - 1.0) < 1e-9);
  CHECK(std::abs(s[1] - 0.7869841570578908) < 1e-9);
  CHECK(std::abs(s[2] - 0.44419316309228035) < 1e-9);
  CHECK(std::abs(cider(words(kToyCands), single(kToyRefs)) - 0.7437257733833903) < 1e-9);
}

TEST_CASE("cider disjoint and degenerate corpora") {
  auto s = cider_scores(words({"p q r", "s t u"}), single({"a b c", "d e f"}));
  CHECK(s[0] == 0.0);
  CHECK(s[1] == 0.0);
  CHECK_THROWS_AS(cider(words({"a", "b"}), single({"x y", "x y"})), std::invalid_argument);
}

TEST_CASE("metric argument errors") {
  CHECK_THROWS_AS(bleu(words({"a"}), single({"a", "b"}), 4), std::invalid_argument);
  CHECK_THROWS_AS(bleu({}, {}, 4), std::invalid_argument);
  CHECK_THROWS_AS(bleu(words({"a"}), single({"a"}), 5), std::invalid_argument);
  CHECK_THROWS_AS(rouge_l(words({"a", "b"}), single({"a"})), std::invalid_argument);
}

TEST_CASE("metrics are invariant under token relabeling") {
  std::vector<std::string> cands = kToyCands, refs = kToyRefs;
  cands.push_back("x plus x plus x");
  refs.push_back("x plus y plus x");
  auto relabel = [](const std::vector<std::string>& in) {
    std::vector<Tokens> out;
    for (const auto& s : in) {
      Tokens t;
      for (const auto& w : split_words(s)) t.push_back("w_" + std::string(w.rbegin(), w.rend()));
      out.push_back(t);
    }
    return out;
  };
  auto c = words(cands), c2 = relabel(cands);
  auto r = single(refs);
  std::vector<std::vector<Tokens>> r2;
  for (auto& t : relabel(refs)) r2.push_back({t});
  for (int n = 1; n <= 4; ++n) CHECK(bleu(c, r, n) == bleu(c2, r2, n));
  CHECK(rouge_l(c, r) == rouge_l(c2, r2));
  CHECK(cider(c, r) == cider(c2, r2));
}

TEST_CASE("truncating correct trailing tokens never raises bleu-4") {
  std::mt19937_64 rng(7);
  const Tokens lex = {"x", "y", "plus", "minus", "equal", "to", "two", "three", "over", "all"};
  for (int trial = 0; trial < 200; ++trial) {
    Tokens ref;
    const int len = 5 + static_cast<int>(rng() % 10);
    for (int i = 0; i < len; ++i) ref.push_back(lex[rng() % lex.size()]);
    // candidate: a prefix of the reference with one early substitution
    Tokens cand(ref.begin(), ref.begin() + (len - static_cast<int>(rng() % 3)));
    cand[rng() % 3] = "z";
    double prev = sentence_bleu(cand, {ref}, 4);
    while (cand.size() > 4) {
      cand.pop_back();
      double cur = sentence_bleu(cand, {ref}, 4);
      CHECK(cur <= prev + 1e-15);
      prev = cur;
    }
  }
}

TEST_CASE("eval report jsonl") {
  auto rep = evaluate_corpus({"0", "1", "2"}, kToyCands, kToyRefs);
  CHECK(rep.examples == 3);
  CHECK(rep.per_example.size() == 3);
  CHECK(std::abs(rep.cider - 0.7437257733833903) < 1e-9);
  std::string text = rep.to_jsonl();
  std::vector<nlohmann::json> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    lines.push_back(nlohmann::json::parse(text.substr(pos, nl - pos)));
    pos = nl + 1;
  }
  REQUIRE(lines.size() == 4);
  CHECK(lines[0]["type"] == "summary");
  for (const char* k : {"bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider"}) CHECK(lines[0].contains(k));
  CHECK(lines[2]["candidate"] == "x minus y equal to three");
  CHECK(text == evaluate_corpus({"0", "1", "2"}, kToyCands, kToyRefs).to_jsonl());
}
