#include "eqdesc/desc_parser.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <sstream>
#include <unordered_map>

namespace eqd {

namespace {

struct Phrase {
  std::vector<std::string> words;
  TokenKind kind;
};

const std::vector<Phrase>& phrases() {
  static const std::vector<Phrase> list = [] {
    std::vector<Phrase> v;
    auto add = [&](std::string text, TokenKind kind) {
      std::istringstream in(text);
      Phrase p{{}, kind};
      std::string w;
      while (in >> w) p.words.push_back(w);
      v.push_back(std::move(p));
    };
    add("greater than or equal to", TokenKind::RelationWord);
    add("less than or equal to", TokenKind::RelationWord);
    add("greater than", TokenKind::RelationWord);
    add("less than", TokenKind::RelationWord);
    add("equal to", TokenKind::RelationWord);
    add("with respect to", TokenKind::LimitWord);
    add("approaches to", TokenKind::LimitWord);
    add("from lower limit", TokenKind::LimitWord);
    add("to upper limit", TokenKind::LimitWord);
    add("from the left", TokenKind::LimitWord);
    add("from the right", TokenKind::LimitWord);
    add("to base", TokenKind::FunctionWord);
    add("power of", TokenKind::OperatorWord);
    add("root of", TokenKind::OperatorWord);
    // longest match first
    std::stable_sort(v.begin(), v.end(),
                     [](const Phrase& a, const Phrase& b) { return a.words.size() > b.words.size(); });
    return v;
  }();
  return list;
}

constexpr std::array<const char*, 20> kSmall = {
    "zero",    "one",     "two",       "three",    "four",     "five",    "six",
    "seven",   "eight",   "nine",      "ten",      "eleven",   "twelve",  "thirteen",
    "fourteen", "fifteen", "sixteen",  "seventeen", "eighteen", "nineteen"};
constexpr std::array<const char*, 10> kTens = {"",      "",      "twenty",  "thirty", "forty",
                                               "fifty", "sixty", "seventy", "eighty", "ninety"};
constexpr std::array<const char*, 10> kOrdinals = {"",      "",        "second",  "third", "fourth",
                                                   "fifth", "sixth",   "seventh", "eighth", "ninth"};

const std::unordered_map<std::string, TokenKind>& single_words() {
  static const std::unordered_map<std::string, TokenKind> m = [] {
    std::unordered_map<std::string, TokenKind> w;
    for (const char* s : kSmall) w[s] = TokenKind::NumberWord;
    for (std::size_t i = 2; i < kTens.size(); ++i) w[kTens[i]] = TokenKind::NumberWord;
    for (std::size_t i = 2; i < kOrdinals.size(); ++i) w[kOrdinals[i]] = TokenKind::FunctionWord;
    for (const char* s : {"hundred", "thousand", "point"}) w[s] = TokenKind::NumberWord;
    for (const char* s : {"x", "y", "z", "t"}) w[s] = TokenKind::Variable;
    for (const char* s : {"plus", "minus", "times", "over", "square"}) w[s] = TokenKind::OperatorWord;
    w["all"] = TokenKind::ScopeMarker;
    for (const char* s : {"sin", "cos", "tan", "log", "exponential", "negative", "of"}) {
      w[s] = TokenKind::FunctionWord;
    }
    for (const char* s : {"limit", "as", "integral", "differentiation"}) w[s] = TokenKind::LimitWord;
    w["and"] = TokenKind::Conjunction;
    return w;
  }();
  return m;
}

std::optional<std::uint32_t> small_value(const std::string& w) {
  for (std::size_t i = 0; i < kSmall.size(); ++i) {
    if (w == kSmall[i]) return static_cast<std::uint32_t>(i);
  }
  return std::nullopt;
}

std::optional<std::uint32_t> tens_value(const std::string& w) {
  for (std::size_t i = 2; i < kTens.size(); ++i) {
    if (w == kTens[i]) return static_cast<std::uint32_t>(i * 10);
  }
  return std::nullopt;
}

std::optional<std::uint32_t> ordinal_value(const std::string& w) {
  for (std::size_t i = 2; i < kOrdinals.size(); ++i) {
    if (w == kOrdinals[i]) return static_cast<std::uint32_t>(i);
  }
  return std::nullopt;
}

std::optional<TrigKind> trig_kind(const std::string& w) {
  if (w == "sin") return TrigKind::Sin;
  if (w == "cos") return TrigKind::Cos;
  if (w == "tan") return TrigKind::Tan;
  return std::nullopt;
}

std::optional<RelOp> relation_op(const std::string& w) {
  if (w == "equal to") return RelOp::Eq;
  if (w == "greater than") return RelOp::Gt;
  if (w == "less than") return RelOp::Lt;
  if (w == "greater than or equal to") return RelOp::Ge;
  if (w == "less than or equal to") return RelOp::Le;
  return std::nullopt;
}

class Parser {
 public:
  explicit Parser(std::vector<DescToken> tokens, std::size_t word_count)
      : toks_(std::move(tokens)), word_count_(word_count) {}

  Expr description() {
    Expr e = top();
    if (!at_end()) fail("unexpected '" + peek() + "'");
    return e;
  }

 private:
  std::vector<DescToken> toks_;
  std::size_t word_count_;
  std::size_t i_ = 0;

  bool at_end() const { return i_ >= toks_.size(); }
  const std::string& peek(std::size_t ahead = 0) const {
    static const std::string empty;
    return i_ + ahead < toks_.size() ? toks_[i_ + ahead].lexeme : empty;
  }
  std::size_t here() const { return at_end() ? word_count_ : toks_[i_].position; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DescriptionError(DescriptionError::Kind::Syntax, here(), msg);
  }

  bool accept(std::string_view lexeme) {
    if (!at_end() && peek() == lexeme) {
      ++i_;
      return true;
    }
    return false;
  }

  void expect(std::string_view lexeme) {
    if (!accept(lexeme)) {
      fail("expected '" + std::string(lexeme) + "'" +
           (at_end() ? std::string(" at end") : ", found '" + peek() + "'"));
    }
  }

  Variable variable() {
    if (at_end() || toks_[i_].kind != TokenKind::Variable) fail("expected a variable");
    return static_cast<Variable>(toks_[i_++].lexeme[0]);
  }

  Expr top() {
    if (accept("limit")) {
      expect("of");
      Expr body = bracket_chain();
      expect("as");
      Variable v = variable();
      expect("approaches to");
      Expr target = simple();
      LimitSide side = LimitSide::Both;
      if (accept("from the left")) side = LimitSide::Left;
      else if (accept("from the right")) side = LimitSide::Right;
      return ex::limit(body, v, target, side);
    }
    if (accept("differentiation")) {
      expect("of");
      Expr body = bracket_chain();
      expect("with respect to");
      return ex::derivative(body, variable());
    }
    if (accept("integral")) {
      expect("of");
      Expr body = bracket_chain();
      expect("with respect to");
      Variable v = variable();
      if (accept("from lower limit")) {
        Expr lo = simple();
        expect("to upper limit");
        Expr hi = simple();
        return ex::finite_integral(body, v, lo, hi);
      }
      return ex::integral(body, v);
    }
    Expr lhs = bracket_chain();
    if (at_end()) return lhs;
    Expr first = relation_rest(lhs);
    if (accept("and")) {
      const std::size_t pos = here();
      Expr second = relation_rest(bracket_chain());
      if (!first.get_if<node::Relation>() || first.get_if<node::Relation>()->op != RelOp::Eq ||
          second.get_if<node::Relation>()->op != RelOp::Eq) {
        throw DescriptionError(DescriptionError::Kind::Syntax, pos,
                               "only equations can be joined with 'and'");
      }
      return ex::system(first, second);
    }
    return first;
  }

  Expr relation_rest(Expr lhs) {
    const auto op = relation_op(peek());
    if (!op) fail(at_end() ? "expected a relation" : "unexpected '" + peek() + "'");
    ++i_;
    return ex::relation(*op, lhs, bracket_chain());
  }

  // Chain delimited by fixed words; "all" operators apply to everything
  // accumulated so far.
  Expr bracket_chain() {
    Expr e = term();
    for (;;) {
      if (accept("plus")) {
        e = ex::add(e, term());
      } else if (accept("minus")) {
        e = ex::sub(e, term());
      } else if (peek() == "all") {
        const std::string& next = peek(1);
        if (next == "plus" || next == "minus" || next == "over") {
          i_ += 2;
          if (next == "plus") e = ex::add(e, term());
          else if (next == "minus") e = ex::sub(e, term());
          else e = ex::frac(e, scope_chain());
        } else {
          fail("'all' must be followed by plus, minus or over");
        }
      } else {
        return e;
      }
    }
  }

  // Denominator or "of all" argument: runs until an "all" or a fixed word.
  Expr scope_chain() {
    Expr e = term();
    for (;;) {
      if (accept("plus")) e = ex::add(e, term());
      else if (accept("minus")) e = ex::sub(e, term());
      else return e;
    }
  }

  Expr term() {
    Expr s = simple();
    if (accept("over")) return ex::frac(s, scope_chain());
    return s;
  }

  Expr argument_after_of() {
    if (accept("all")) return scope_chain();
    return simple();
  }

  // "f x" or "f of all ...".
  Expr prefix_argument() {
    if (accept("of")) {
      expect("all");
      return scope_chain();
    }
    return simple();
  }

  Expr postfix(Expr p) {
    if (accept("square")) return ex::pow(p, ex::constant(2));
    if (accept("power of")) return ex::pow(primary(), p);
    return p;
  }

  Expr primary() {
    if (at_end()) fail("expected a number or variable at end");
    if (toks_[i_].kind == TokenKind::Variable) return ex::var(variable());
    if (starts_number()) return number();
    fail("expected a number or variable, found '" + peek() + "'");
  }

  bool starts_number() const {
    return !at_end() && (small_value(peek()) || tens_value(peek()));
  }

  Expr simple() {
    if (at_end()) fail("expected a term at end");
    const std::string& w = peek();
    if (starts_number()) {
      Expr n = number();
      if (accept("times")) return ex::mul(n, simple());
      return postfix(n);
    }
    if (toks_[i_].kind == TokenKind::Variable) return postfix(ex::var(variable()));
    if (auto k = trig_kind(w)) {
      ++i_;
      return ex::trig(*k, prefix_argument());
    }
    if (accept("negative")) return ex::neg(prefix_argument());
    if (accept("exponential")) {
      expect("of");
      return ex::exp(argument_after_of());
    }
    if (auto k = ordinal_value(w)) {
      ++i_;
      if (accept("power of")) return ex::pow(argument_after_of(), ex::constant(*k));
      if (accept("root of")) return ex::root(ex::constant(*k), argument_after_of());
      fail("expected 'power of' or 'root of'");
    }
    if (accept("log")) {
      Expr arg = bracket_chain();
      expect("to base");
      return ex::log(primary(), arg);
    }
    fail("expected a term, found '" + w + "'");
  }

  std::uint32_t below_hundred() {
    if (auto t = tens_value(peek())) {
      ++i_;
      if (auto u = small_value(peek()); u && *u >= 1 && *u <= 9) {
        ++i_;
        return *t + *u;
      }
      return *t;
    }
    if (auto s = small_value(peek())) {
      ++i_;
      return *s;
    }
    fail("expected a number word");
  }

  bool and_then_number() const {
    return peek() == "and" && (small_value(peek(1)) || tens_value(peek(1)));
  }

  // Optional "and" + number under a hundred after "hundred" or "thousand".
  std::uint32_t and_rest() {
    if (!and_then_number()) return 0;
    ++i_;
    const std::uint32_t r = below_hundred();
    if (r == 0) fail("'and zero' is not a number");
    return r;
  }

  std::uint32_t below_thousand_after(std::uint32_t lead) {
    if (lead >= 1 && lead <= 9 && accept("hundred")) return lead * 100 + and_rest();
    return lead;
  }

  std::uint32_t integer() {
    const std::size_t start = i_;
    const std::uint32_t lead = below_hundred();
    if (lead >= 1 && lead <= 9 && accept("thousand")) {
      std::uint32_t v = lead * 1000;
      if (and_then_number()) return v + and_rest();
      if (auto d = small_value(peek()); d && *d >= 1 && *d <= 9 && peek(1) == "hundred") {
        ++i_;
        return v + below_thousand_after(*d);
      }
      return v;
    }
    if (i_ - start == 1 && (lead >= 1 && lead <= 9)) return below_thousand_after(lead);
    return lead;
  }

  Expr number() {
    const std::uint32_t n = integer();
    if (!accept("point")) return ex::constant(n);
    std::string digits;
    while (auto d = small_value(peek())) {
      if (*d > 9) break;
      digits.push_back(static_cast<char>('0' + *d));
      ++i_;
    }
    if (digits.empty()) fail("expected digits after 'point'");
    return ex::decimal(n, digits);
  }
};

}  // namespace

std::string_view token_kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::NumberWord: return "number-word";
    case TokenKind::Variable: return "variable";
    case TokenKind::OperatorWord: return "operator-word";
    case TokenKind::ScopeMarker: return "scope-marker";
    case TokenKind::FunctionWord: return "function-word";
    case TokenKind::RelationWord: return "relation-word";
    case TokenKind::LimitWord: return "limit-word";
    case TokenKind::Conjunction: return "conjunction";
  }
  return "?";
}

DescriptionError::DescriptionError(Kind kind, std::size_t position, const std::string& what)
    : std::runtime_error((kind == Kind::Lexical ? "lexical error at word " : "syntax error at word ") +
                         std::to_string(position) + ": " + what),
      kind_(kind),
      position_(position) {}

std::vector<DescToken> tokenize_description(std::string_view text) {
  std::vector<std::string> words;
  {
    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::istringstream in(lowered);
    std::string w;
    while (in >> w) words.push_back(w);
  }
  std::vector<DescToken> out;
  std::size_t i = 0;
  while (i < words.size()) {
    bool matched = false;
    for (const Phrase& p : phrases()) {
      if (i + p.words.size() > words.size()) continue;
      if (!std::equal(p.words.begin(), p.words.end(), words.begin() + static_cast<long>(i))) continue;
      std::string lexeme = p.words[0];
      for (std::size_t k = 1; k < p.words.size(); ++k) lexeme += " " + p.words[k];
      out.push_back({std::move(lexeme), p.kind, i});
      i += p.words.size();
      matched = true;
      break;
    }
    if (matched) continue;
    const auto it = single_words().find(words[i]);
    if (it == single_words().end()) {
      throw DescriptionError(DescriptionError::Kind::Lexical, i,
                             "'" + words[i] + "' is not a description word");
    }
    out.push_back({words[i], it->second, i});
    ++i;
  }
  return out;
}

Expr parse_description(std::string_view text) {
  auto tokens = tokenize_description(text);
  const std::size_t words = tokens.empty() ? 0 : tokens.back().position + 1 +
                                                     static_cast<std::size_t>(std::count(
                                                         tokens.back().lexeme.begin(),
                                                         tokens.back().lexeme.end(), ' '));
  if (tokens.empty()) throw DescriptionError(DescriptionError::Kind::Syntax, 0, "empty description");
  return Parser(std::move(tokens), words).description();
}

}  // namespace eqd
