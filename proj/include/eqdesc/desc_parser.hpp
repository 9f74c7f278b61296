#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "eqdesc/expr.hpp"

namespace eqd {

enum class TokenKind {
  NumberWord,
  Variable,
  OperatorWord,
  ScopeMarker,
  FunctionWord,
  RelationWord,
  LimitWord,
  Conjunction,
};

std::string_view token_kind_name(TokenKind k);

// One lexical unit. Multi-word phrases ("with respect to") are single tokens;
// position is the index of the first word in the whitespace-split input.
struct DescToken {
  std::string lexeme;
  TokenKind kind;
  std::size_t position;
};

class DescriptionError : public std::runtime_error {
 public:
  enum class Kind { Lexical, Syntax };

  DescriptionError(Kind kind, std::size_t position, const std::string& what);

  Kind kind() const { return kind_; }
  std::size_t position() const { return position_; }  // word index

 private:
  Kind kind_;
  std::size_t position_;
};

// Case-insensitive; throws DescriptionError(Lexical) on a word outside the
// lexicon or a phrase fragment used on its own.
std::vector<DescToken> tokenize_description(std::string_view text);

// Inverse of verbalize on every description it produces. Throws
// DescriptionError(Syntax) with the offending word index.
Expr parse_description(std::string_view text);

}  // namespace eqd
