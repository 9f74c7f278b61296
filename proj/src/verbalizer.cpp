#include "eqdesc/verbalizer.hpp"

#include <array>
#include <sstream>
#include <stdexcept>

namespace eqd {

namespace {

constexpr std::array<const char*, 20> kSmall = {
    "zero",    "one",     "two",       "three",    "four",     "five",    "six",
    "seven",   "eight",   "nine",      "ten",      "eleven",   "twelve",  "thirteen",
    "fourteen", "fifteen", "sixteen",  "seventeen", "eighteen", "nineteen"};
constexpr std::array<const char*, 10> kTens = {"",      "",      "twenty",  "thirty", "forty",
                                               "fifty", "sixty", "seventy", "eighty", "ninety"};
constexpr std::array<const char*, 10> kOrdinals = {"",      "",        "second",  "third", "fourth",
                                                   "fifth", "sixth",   "seventh", "eighth", "ninth"};

std::string below_hundred(std::uint32_t n) {
  if (n < 20) return kSmall[n];
  std::string s = kTens[n / 10];
  if (n % 10 != 0) s += std::string(" ") + kSmall[n % 10];
  return s;
}

std::string below_thousand(std::uint32_t n) {
  if (n < 100) return below_hundred(n);
  std::string s = std::string(kSmall[n / 100]) + " hundred";
  if (n % 100 != 0) s += " and " + below_hundred(n % 100);
  return s;
}

[[noreturn]] void inexpressible(const Expr& e, const std::string& why) {
  throw std::invalid_argument("cannot verbalize " + to_canonical_string(e) + ": " + why);
}

const char* trig_word(TrigKind k) {
  switch (k) {
    case TrigKind::Sin: return "sin";
    case TrigKind::Cos: return "cos";
    case TrigKind::Tan: return "tan";
  }
  return "";
}

const char* relation_words(RelOp op) {
  switch (op) {
    case RelOp::Eq: return "equal to";
    case RelOp::Gt: return "greater than";
    case RelOp::Lt: return "less than";
    case RelOp::Ge: return "greater than or equal to";
    case RelOp::Le: return "less than or equal to";
  }
  return "";
}

bool is_primary(const Expr& e) {
  return e.is<node::Const>() || e.is<node::DecimalConst>() || e.is<node::Var>();
}

std::uint32_t ordinal_exponent(const Expr& e) {
  const auto* c = e.get_if<node::Const>();
  if (c == nullptr || c->value < 2 || c->value > 9) return 0;
  return c->value;
}

struct Rendered {
  std::string text;
  bool open = false;  // ends inside a denominator or "of all" scope
};

struct Ctx {
  bool bracket;
  bool leftmost;
};

constexpr Ctx kBracket{true, true};
constexpr Ctx kScope{false, false};

class Verbalizer {
 public:
  std::string top(const Expr& e) {
    if (const auto* r = e.get_if<node::Relation>()) return relation(*r);
    if (const auto* s = e.get_if<node::System>()) {
      const auto* a = s->first.get_if<node::Relation>();
      const auto* b = s->second.get_if<node::Relation>();
      return relation(*a) + " and " + relation(*b);
    }
    if (const auto* l = e.get_if<node::Limit>()) {
      std::string s = "limit of " + chain(l->body) + " as " + to_char(l->var) +
                      " approaches to " + simple(l->target);
      if (l->side == LimitSide::Left) s += " from the left";
      if (l->side == LimitSide::Right) s += " from the right";
      return s;
    }
    if (const auto* d = e.get_if<node::Derivative>()) {
      return "differentiation of " + chain(d->body) + " with respect to " + to_char(d->var);
    }
    if (const auto* i = e.get_if<node::Integral>()) {
      return "integral of " + chain(i->integrand) + " with respect to " + to_char(i->var);
    }
    if (const auto* f = e.get_if<node::FiniteIntegral>()) {
      return "integral of " + chain(f->integrand) + " with respect to " + to_char(f->var) +
             " from lower limit " + simple(f->lower) + " to upper limit " + simple(f->upper);
    }
    return chain(e);
  }

 private:
  std::string relation(const node::Relation& r) {
    return chain(r.lhs) + " " + relation_words(r.op) + " " + chain(r.rhs);
  }

  // A chain delimited by fixed words on both sides.
  std::string chain(const Expr& e) { return render(e, kBracket).text; }

  bool is_simple(const Expr& e) {
    if (is_primary(e)) return true;
    if (const auto* x = e.get_if<node::Neg>()) return is_simple(x->operand);
    if (const auto* x = e.get_if<node::Exp>()) return is_simple(x->argument);
    if (const auto* x = e.get_if<node::Trig>()) return is_simple(x->argument);
    if (const auto* x = e.get_if<node::Root>()) return is_simple(x->radicand);
    if (const auto* x = e.get_if<node::Mul>()) return is_simple(x->rhs);
    if (e.is<node::Log>()) return true;
    if (const auto* x = e.get_if<node::Pow>()) {
      if (x->exponent.is<node::Var>()) return true;
      if (ordinal_exponent(x->exponent) == 2 && is_primary(x->base)) return true;
      return is_simple(x->base);
    }
    return false;
  }

  // Words of a term ending in a prefix-function argument; an operator after
  // one is spoken with "all" ("exponential of x all plus one").
  bool ends_with_prefix_function(const Expr& e) {
    if (e.is<node::Neg>() || e.is<node::Exp>() || e.is<node::Trig>() || e.is<node::Root>()) {
      return true;
    }
    if (const auto* x = e.get_if<node::Pow>()) {
      return !(x->exponent.is<node::Var>() ||
               (ordinal_exponent(x->exponent) == 2 && is_primary(x->base)));
    }
    if (const auto* x = e.get_if<node::Mul>()) return ends_with_prefix_function(x->rhs);
    if (const auto* x = e.get_if<node::Add>()) return ends_with_prefix_function(x->rhs);
    if (const auto* x = e.get_if<node::Sub>()) return ends_with_prefix_function(x->rhs);
    return false;
  }

  std::string simple(const Expr& e) {
    if (!is_simple(e)) inexpressible(e, "expected a single term");
    return render(e, kScope).text;
  }

  std::string primary(const Expr& e) {
    if (!is_primary(e)) inexpressible(e, "expected a number or variable");
    return render(e, kScope).text;
  }

  // Argument of a prefix function: one term, or an "all" scope.
  Rendered argument(const Expr& e, const char* before_all) {
    if (is_simple(e)) return {simple(e), false};
    return {std::string(before_all) + "all " + render(e, kScope).text, true};
  }

  Rendered additive(const Expr& l, const Expr& r, const char* op, const Expr& whole, Ctx ctx) {
    if (r.is<node::Add>() || r.is<node::Sub>()) inexpressible(whole, "right-nested sum");
    Rendered left = render(l, ctx);
    Rendered right = render(r, Ctx{ctx.bracket, false});
    if (!ctx.bracket && left.open) inexpressible(whole, "open scope before an operator");
    const bool all = ctx.bracket && (left.open || right.open || ends_with_prefix_function(l));
    return {left.text + (all ? " all " : " ") + op + " " + right.text, right.open};
  }

  Rendered render(const Expr& e, Ctx ctx) {
    if (const auto* x = e.get_if<node::Const>()) {
      if (x->value > 9999) inexpressible(e, "constant above 9999");
      return {number_to_words(x->value), false};
    }
    if (const auto* x = e.get_if<node::DecimalConst>()) {
      std::string s = number_to_words(x->integer_part) + " point";
      for (char c : x->fraction_digits) s += std::string(" ") + kSmall[c - '0'];
      return {s, false};
    }
    if (const auto* x = e.get_if<node::Var>()) return {std::string(1, to_char(x->name)), false};
    if (const auto* x = e.get_if<node::Neg>()) {
      Rendered a = argument(x->operand, "of ");
      return {"negative " + a.text, a.open};
    }
    if (const auto* x = e.get_if<node::Add>()) return additive(x->lhs, x->rhs, "plus", e, ctx);
    if (const auto* x = e.get_if<node::Sub>()) return additive(x->lhs, x->rhs, "minus", e, ctx);
    if (const auto* x = e.get_if<node::Mul>()) {
      return {render(x->lhs, kScope).text + " times " + simple(x->rhs), false};
    }
    if (const auto* x = e.get_if<node::Frac>()) {
      const std::string den = render(x->denominator, kScope).text;
      if (is_simple(x->numerator)) return {simple(x->numerator) + " over " + den, true};
      if (!(ctx.bracket && ctx.leftmost)) {
        inexpressible(e, "compound numerator must start its chain");
      }
      return {render(x->numerator, kBracket).text + " all over " + den, true};
    }
    if (const auto* x = e.get_if<node::Pow>()) {
      if (x->exponent.is<node::Var>()) {
        return {render(x->exponent, kScope).text + " power of " + primary(x->base), false};
      }
      const std::uint32_t k = ordinal_exponent(x->exponent);
      if (k == 0) inexpressible(e, "exponent must be a variable or 2..9");
      if (k == 2 && is_primary(x->base)) return {render(x->base, kScope).text + " square", false};
      Rendered a = argument(x->base, "");
      return {std::string(kOrdinals[k]) + " power of " + a.text, a.open};
    }
    if (const auto* x = e.get_if<node::Root>()) {
      const std::uint32_t k = ordinal_exponent(x->degree);
      if (k == 0) inexpressible(e, "root degree must be 2..9");
      Rendered a = argument(x->radicand, "");
      return {std::string(kOrdinals[k]) + " root of " + a.text, a.open};
    }
    if (const auto* x = e.get_if<node::Log>()) {
      return {"log " + chain(x->argument) + " to base " + primary(x->base), false};
    }
    if (const auto* x = e.get_if<node::Exp>()) {
      Rendered a = argument(x->argument, "");
      return {"exponential of " + a.text, a.open};
    }
    if (const auto* x = e.get_if<node::Trig>()) {
      Rendered a = argument(x->argument, "of ");
      return {std::string(trig_word(x->kind)) + " " + a.text, a.open};
    }
    inexpressible(e, "construct only allowed at the top level");
  }
};

}  // namespace

Description Description::from_text(std::string text) {
  Description d;
  d.text = std::move(text);
  std::istringstream in(d.text);
  std::string w;
  while (in >> w) d.tokens.push_back(w);
  return d;
}

std::string number_to_words(std::uint32_t n) {
  if (n > 9999) throw std::invalid_argument("number_to_words: " + std::to_string(n) + " > 9999");
  if (n < 1000) return below_thousand(n);
  std::string s = std::string(kSmall[n / 1000]) + " thousand";
  const std::uint32_t rest = n % 1000;
  if (rest == 0) return s;
  if (rest < 100) return s + " and " + below_hundred(rest);
  return s + " " + below_thousand(rest);
}

std::string ordinal_word(std::uint32_t n) {
  if (n < 2 || n > 9) throw std::invalid_argument("ordinal_word: " + std::to_string(n));
  return kOrdinals[n];
}

Description verbalize(const Expr& e) {
  Verbalizer v;
  return Description::from_text(v.top(e));
}

const std::set<std::string>& lexicon_words() {
  static const std::set<std::string> words = [] {
    std::set<std::string> s;
    for (const char* w : kSmall) s.insert(w);
    for (std::size_t i = 2; i < kTens.size(); ++i) s.insert(kTens[i]);
    for (std::size_t i = 2; i < kOrdinals.size(); ++i) s.insert(kOrdinals[i]);
    for (const char* w :
         {"hundred", "thousand", "and", "point", "x", "y", "z", "t", "plus", "minus", "times",
          "over", "all", "square", "power", "root", "of", "sin", "cos", "tan", "log", "to",
          "base", "exponential", "negative", "equal", "greater", "less", "than", "or", "limit",
          "as", "approaches", "from", "the", "left", "right", "lower", "upper", "integral",
          "differentiation", "with", "respect"}) {
      s.insert(w);
    }
    return s;
  }();
  return words;
}

}  // namespace eqd
