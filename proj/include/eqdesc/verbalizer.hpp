#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "eqdesc/expr.hpp"

namespace eqd {

struct Description {
  std::string text;
  std::vector<std::string> tokens;  // whitespace split of text

  static Description from_text(std::string text);
};

// British-style number words with "and": 363 -> "three hundred and sixty
// three". Throws std::invalid_argument outside [0, 9999].
std::string number_to_words(std::uint32_t n);

// Ordinal used in power and root phrases, 2 -> "second" ... 9 -> "ninth".
std::string ordinal_word(std::uint32_t n);

// Maps an expression to its controlled-English reading.
//
// Scoping conventions:
//  - "A over B": A is the single term before "over"; B runs over the longest
//    following plus/minus chain ("x over y plus z" is x/(y+z)).
//  - "... all over B": everything before it in the current chain is the
//    numerator ("x plus y all over z" is (x+y)/z).
//  - "all plus" / "all minus": closes every open denominator or function
//    argument back to the enclosing chain ("x minus y all over z all plus t").
//  - "f X" applies f to one term; "f of all ..." opens an argument scope that
//    only an "all" operator closes ("exponential of all one plus x all minus
//    one").
//
// Throws std::invalid_argument for trees outside the fragment these rules can
// say without ambiguity (e.g. a right-nested sum, or a compound numerator that
// is not the first term of its chain).
Description verbalize(const Expr& e);

// Every word the grammar can emit.
const std::set<std::string>& lexicon_words();

}  // namespace eqd
