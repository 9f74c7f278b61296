#include "eqdesc/expr.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace eqd {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Expr make(auto&& n) {
  return Expr(std::make_shared<const ExprNode>(ExprNode{std::forward<decltype(n)>(n)}));
}

bool is_numeric_leaf(const Expr& e) { return e.is<node::Const>() || e.is<node::DecimalConst>(); }

}  // namespace

std::string_view category_code(Category c) {
  switch (c) {
    case Category::LinearEquation: return "LE";
    case Category::Inequality: return "IE";
    case Category::PairOfLinearEquations: return "PLE";
    case Category::Limit: return "LT";
    case Category::Differentiation: return "DI";
    case Category::Integral: return "IN";
    case Category::FiniteIntegral: return "FIN";
  }
  throw std::invalid_argument("unknown category value " + std::to_string(static_cast<int>(c)));
}

Category category_from_code(std::string_view code) {
  for (Category c : kAllCategories) {
    if (category_code(c) == code) return c;
  }
  throw std::invalid_argument("unknown category code '" + std::string(code) + "'");
}

bool is_variable_char(char c) { return c == 'x' || c == 'y' || c == 'z' || c == 't'; }

namespace ex {

Expr constant(std::uint32_t v) { return make(node::Const{v}); }

Expr decimal(std::uint32_t integer_part, std::string fraction_digits) {
  if (fraction_digits.empty()) throw std::invalid_argument("decimal needs fraction digits");
  for (char c : fraction_digits) {
    if (c < '0' || c > '9') throw std::invalid_argument("decimal fraction must be digits");
  }
  return make(node::DecimalConst{integer_part, std::move(fraction_digits)});
}

Expr var(Variable v) { return make(node::Var{v}); }

Expr var(char name) {
  if (!is_variable_char(name)) {
    throw std::invalid_argument(std::string("variable outside alphabet: ") + name);
  }
  return make(node::Var{static_cast<Variable>(name)});
}

Expr neg(Expr e) { return make(node::Neg{std::move(e)}); }
Expr add(Expr l, Expr r) { return make(node::Add{std::move(l), std::move(r)}); }
Expr sub(Expr l, Expr r) { return make(node::Sub{std::move(l), std::move(r)}); }

Expr mul(Expr scalar, Expr e) {
  if (!is_numeric_leaf(scalar)) {
    throw std::invalid_argument("Mul lhs must be a constant");
  }
  return make(node::Mul{std::move(scalar), std::move(e)});
}

Expr frac(Expr n, Expr d) { return make(node::Frac{std::move(n), std::move(d)}); }
Expr pow(Expr base, Expr exponent) { return make(node::Pow{std::move(base), std::move(exponent)}); }
Expr root(Expr degree, Expr radicand) {
  return make(node::Root{std::move(degree), std::move(radicand)});
}
Expr log(Expr base, Expr argument) { return make(node::Log{std::move(base), std::move(argument)}); }
Expr exp(Expr argument) { return make(node::Exp{std::move(argument)}); }
Expr trig(TrigKind k, Expr argument) { return make(node::Trig{k, std::move(argument)}); }
Expr integral(Expr integrand, Variable v) { return make(node::Integral{std::move(integrand), v}); }

Expr finite_integral(Expr integrand, Variable v, Expr lower, Expr upper) {
  return make(node::FiniteIntegral{std::move(integrand), v, std::move(lower), std::move(upper)});
}

Expr derivative(Expr body, Variable v) { return make(node::Derivative{std::move(body), v}); }

Expr limit(Expr body, Variable v, Expr target, LimitSide side) {
  return make(node::Limit{std::move(body), v, std::move(target), side});
}

Expr relation(RelOp op, Expr lhs, Expr rhs) {
  return make(node::Relation{op, std::move(lhs), std::move(rhs)});
}

Expr system(Expr first, Expr second) {
  for (const Expr* e : {&first, &second}) {
    const auto* rel = e->get_if<node::Relation>();
    if (rel == nullptr || rel->op != RelOp::Eq) {
      throw std::invalid_argument("System members must be equations");
    }
  }
  return make(node::System{std::move(first), std::move(second)});
}

}  // namespace ex

bool expr_equal(const Expr& a, const Expr& b) {
  const auto& va = a.node().value;
  const auto& vb = b.node().value;
  if (va.index() != vb.index()) return false;
  return std::visit(
      overloaded{
          [&](const node::Const& x) { return x.value == std::get<node::Const>(vb).value; },
          [&](const node::DecimalConst& x) {
            const auto& y = std::get<node::DecimalConst>(vb);
            return x.integer_part == y.integer_part && x.fraction_digits == y.fraction_digits;
          },
          [&](const node::Var& x) { return x.name == std::get<node::Var>(vb).name; },
          [&](const node::Neg& x) { return expr_equal(x.operand, std::get<node::Neg>(vb).operand); },
          [&](const node::Add& x) {
            const auto& y = std::get<node::Add>(vb);
            return expr_equal(x.lhs, y.lhs) && expr_equal(x.rhs, y.rhs);
          },
          [&](const node::Sub& x) {
            const auto& y = std::get<node::Sub>(vb);
            return expr_equal(x.lhs, y.lhs) && expr_equal(x.rhs, y.rhs);
          },
          [&](const node::Mul& x) {
            const auto& y = std::get<node::Mul>(vb);
            return expr_equal(x.lhs, y.lhs) && expr_equal(x.rhs, y.rhs);
          },
          [&](const node::Frac& x) {
            const auto& y = std::get<node::Frac>(vb);
            return expr_equal(x.numerator, y.numerator) &&
                   expr_equal(x.denominator, y.denominator);
          },
          [&](const node::Pow& x) {
            const auto& y = std::get<node::Pow>(vb);
            return expr_equal(x.base, y.base) && expr_equal(x.exponent, y.exponent);
          },
          [&](const node::Root& x) {
            const auto& y = std::get<node::Root>(vb);
            return expr_equal(x.degree, y.degree) && expr_equal(x.radicand, y.radicand);
          },
          [&](const node::Log& x) {
            const auto& y = std::get<node::Log>(vb);
            return expr_equal(x.base, y.base) && expr_equal(x.argument, y.argument);
          },
          [&](const node::Exp& x) {
            return expr_equal(x.argument, std::get<node::Exp>(vb).argument);
          },
          [&](const node::Trig& x) {
            const auto& y = std::get<node::Trig>(vb);
            return x.kind == y.kind && expr_equal(x.argument, y.argument);
          },
          [&](const node::Integral& x) {
            const auto& y = std::get<node::Integral>(vb);
            return x.var == y.var && expr_equal(x.integrand, y.integrand);
          },
          [&](const node::FiniteIntegral& x) {
            const auto& y = std::get<node::FiniteIntegral>(vb);
            return x.var == y.var && expr_equal(x.integrand, y.integrand) &&
                   expr_equal(x.lower, y.lower) && expr_equal(x.upper, y.upper);
          },
          [&](const node::Derivative& x) {
            const auto& y = std::get<node::Derivative>(vb);
            return x.var == y.var && expr_equal(x.body, y.body);
          },
          [&](const node::Limit& x) {
            const auto& y = std::get<node::Limit>(vb);
            return x.var == y.var && x.side == y.side && expr_equal(x.body, y.body) &&
                   expr_equal(x.target, y.target);
          },
          [&](const node::Relation& x) {
            const auto& y = std::get<node::Relation>(vb);
            return x.op == y.op && expr_equal(x.lhs, y.lhs) && expr_equal(x.rhs, y.rhs);
          },
          [&](const node::System& x) {
            const auto& y = std::get<node::System>(vb);
            return expr_equal(x.first, y.first) && expr_equal(x.second, y.second);
          },
      },
      va);
}

Expr deep_copy(const Expr& e) {
  return std::visit(
      overloaded{
          [](const node::Const& x) { return ex::constant(x.value); },
          [](const node::DecimalConst& x) { return ex::decimal(x.integer_part, x.fraction_digits); },
          [](const node::Var& x) { return ex::var(x.name); },
          [](const node::Neg& x) { return ex::neg(deep_copy(x.operand)); },
          [](const node::Add& x) { return ex::add(deep_copy(x.lhs), deep_copy(x.rhs)); },
          [](const node::Sub& x) { return ex::sub(deep_copy(x.lhs), deep_copy(x.rhs)); },
          [](const node::Mul& x) { return ex::mul(deep_copy(x.lhs), deep_copy(x.rhs)); },
          [](const node::Frac& x) {
            return ex::frac(deep_copy(x.numerator), deep_copy(x.denominator));
          },
          [](const node::Pow& x) { return ex::pow(deep_copy(x.base), deep_copy(x.exponent)); },
          [](const node::Root& x) { return ex::root(deep_copy(x.degree), deep_copy(x.radicand)); },
          [](const node::Log& x) { return ex::log(deep_copy(x.base), deep_copy(x.argument)); },
          [](const node::Exp& x) { return ex::exp(deep_copy(x.argument)); },
          [](const node::Trig& x) { return ex::trig(x.kind, deep_copy(x.argument)); },
          [](const node::Integral& x) { return ex::integral(deep_copy(x.integrand), x.var); },
          [](const node::FiniteIntegral& x) {
            return ex::finite_integral(deep_copy(x.integrand), x.var, deep_copy(x.lower),
                                       deep_copy(x.upper));
          },
          [](const node::Derivative& x) { return ex::derivative(deep_copy(x.body), x.var); },
          [](const node::Limit& x) {
            return ex::limit(deep_copy(x.body), x.var, deep_copy(x.target), x.side);
          },
          [](const node::Relation& x) {
            return ex::relation(x.op, deep_copy(x.lhs), deep_copy(x.rhs));
          },
          [](const node::System& x) { return ex::system(deep_copy(x.first), deep_copy(x.second)); },
      },
      e.node().value);
}

int depth(const Expr& e) {
  auto d1 = [](const Expr& a) { return 1 + depth(a); };
  auto d2 = [](const Expr& a, const Expr& b) { return 1 + std::max(depth(a), depth(b)); };
  return std::visit(
      overloaded{
          [](const node::Const&) { return 0; },
          [](const node::DecimalConst&) { return 0; },
          [](const node::Var&) { return 0; },
          [&](const node::Neg& x) { return d1(x.operand); },
          [&](const node::Add& x) { return d2(x.lhs, x.rhs); },
          [&](const node::Sub& x) { return d2(x.lhs, x.rhs); },
          [&](const node::Mul& x) { return d2(x.lhs, x.rhs); },
          [&](const node::Frac& x) { return d2(x.numerator, x.denominator); },
          [&](const node::Pow& x) { return d2(x.base, x.exponent); },
          [&](const node::Root& x) { return d2(x.degree, x.radicand); },
          [&](const node::Log& x) { return d2(x.base, x.argument); },
          [&](const node::Exp& x) { return d1(x.argument); },
          [&](const node::Trig& x) { return d1(x.argument); },
          [&](const node::Integral& x) { return d1(x.integrand); },
          [&](const node::FiniteIntegral& x) {
            return 1 + std::max({depth(x.integrand), depth(x.lower), depth(x.upper)});
          },
          [&](const node::Derivative& x) { return d1(x.body); },
          [&](const node::Limit& x) { return d2(x.body, x.target); },
          [&](const node::Relation& x) { return d2(x.lhs, x.rhs); },
          [&](const node::System& x) { return d2(x.first, x.second); },
      },
      e.node().value);
}

namespace {

const char* trig_name(TrigKind k) {
  switch (k) {
    case TrigKind::Sin: return "sin";
    case TrigKind::Cos: return "cos";
    case TrigKind::Tan: return "tan";
  }
  return "?";
}

const char* rel_symbol(RelOp op) {
  switch (op) {
    case RelOp::Eq: return "=";
    case RelOp::Gt: return ">";
    case RelOp::Lt: return "<";
    case RelOp::Ge: return ">=";
    case RelOp::Le: return "<=";
  }
  return "?";
}

void canonical(const Expr& e, std::string& out) {
  auto bin = [&out](const Expr& l, const char* op, const Expr& r) {
    out += '(';
    canonical(l, out);
    out += op;
    canonical(r, out);
    out += ')';
  };
  auto wrapped = [&out](const Expr& a) {
    out += '(';
    canonical(a, out);
    out += ')';
  };
  std::visit(overloaded{
                 [&](const node::Const& x) { out += std::to_string(x.value); },
                 [&](const node::DecimalConst& x) {
                   out += std::to_string(x.integer_part) + "." + x.fraction_digits;
                 },
                 [&](const node::Var& x) { out += to_char(x.name); },
                 [&](const node::Neg& x) {
                   out += "(-";
                   canonical(x.operand, out);
                   out += ')';
                 },
                 [&](const node::Add& x) { bin(x.lhs, "+", x.rhs); },
                 [&](const node::Sub& x) { bin(x.lhs, "-", x.rhs); },
                 [&](const node::Mul& x) { bin(x.lhs, "*", x.rhs); },
                 [&](const node::Frac& x) {
                   out += '(';
                   canonical(x.numerator, out);
                   out += '/';
                   wrapped(x.denominator);
                   out += ')';
                 },
                 [&](const node::Pow& x) {
                   out += '(';
                   canonical(x.base, out);
                   out += '^';
                   wrapped(x.exponent);
                   out += ')';
                 },
                 [&](const node::Root& x) {
                   out += "root";
                   wrapped(x.degree);
                   wrapped(x.radicand);
                 },
                 [&](const node::Log& x) {
                   out += "log_";
                   wrapped(x.base);
                   wrapped(x.argument);
                 },
                 [&](const node::Exp& x) {
                   out += "exp";
                   wrapped(x.argument);
                 },
                 [&](const node::Trig& x) {
                   out += trig_name(x.kind);
                   wrapped(x.argument);
                 },
                 [&](const node::Integral& x) {
                   out += "int";
                   wrapped(x.integrand);
                   out += 'd';
                   out += to_char(x.var);
                 },
                 [&](const node::FiniteIntegral& x) {
                   out += "int_";
                   wrapped(x.lower);
                   out += '^';
                   wrapped(x.upper);
                   wrapped(x.integrand);
                   out += 'd';
                   out += to_char(x.var);
                 },
                 [&](const node::Derivative& x) {
                   out += "d/d";
                   out += to_char(x.var);
                   wrapped(x.body);
                 },
                 [&](const node::Limit& x) {
                   out += "lim_(";
                   out += to_char(x.var);
                   out += "->";
                   canonical(x.target, out);
                   if (x.side == LimitSide::Left) out += "^-";
                   if (x.side == LimitSide::Right) out += "^+";
                   out += ')';
                   wrapped(x.body);
                 },
                 [&](const node::Relation& x) { bin(x.lhs, rel_symbol(x.op), x.rhs); },
                 [&](const node::System& x) {
                   out += '{';
                   canonical(x.first, out);
                   out += ';';
                   canonical(x.second, out);
                   out += '}';
                 },
             },
             e.node().value);
}

}  // namespace

std::string to_canonical_string(const Expr& e) {
  std::string out;
  canonical(e, out);
  return out;
}

bool root_matches_category(const Expr& e, Category c) {
  switch (c) {
    case Category::LinearEquation: {
      const auto* r = e.get_if<node::Relation>();
      return r != nullptr && r->op == RelOp::Eq;
    }
    case Category::Inequality: {
      const auto* r = e.get_if<node::Relation>();
      return r != nullptr && r->op != RelOp::Eq;
    }
    case Category::PairOfLinearEquations: return e.is<node::System>();
    case Category::Limit: return e.is<node::Limit>();
    case Category::Differentiation: return e.is<node::Derivative>();
    case Category::Integral: return e.is<node::Integral>();
    case Category::FiniteIntegral: return e.is<node::FiniteIntegral>();
  }
  return false;
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_below(0)");
  const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % n;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % n;
}

// ---------------------------------------------------------------------------
// Sampler
//
// Generated trees stay inside the fragment the controlled-English grammar can
// say unambiguously. The constraints follow how a verbalized subtree sits in
// its surrounding word sequence:
//   bracket  - the subtree is in a chain delimited by fixed words (relation
//              sides, calculus bodies, log arguments), so "all" markers work.
//   leftmost - first term of that bracket chain; only here may a fraction take
//              a compound numerator ("... all over ...").
//   closed   - the rendering may not end inside an open denominator or
//              function scope.
//   simple   - a single closed term (operand of "times", plain "over", etc.).
//   term     - no top-level plus/minus; chains are left-associated.

namespace {

struct Slot {
  bool bracket = true;
  bool leftmost = true;
  bool closed = false;
  bool simple = false;
  bool term = false;
};

constexpr Slot kBracketStart{true, true, false, false, false};
constexpr Slot kExtended{false, false, false, false, false};
constexpr Slot kSimple{false, false, true, true, true};

class Sampler {
 public:
  Sampler(std::mt19937_64& rng, const SamplerOptions& opt) : rng_(rng), opt_(opt) {}

  Expr equation(Category c, int budget) {
    switch (c) {
      case Category::LinearEquation:
        return ex::relation(RelOp::Eq, linear_lhs(budget), linear_rhs(budget));
      case Category::Inequality: {
        static constexpr RelOp kOps[] = {RelOp::Gt, RelOp::Lt, RelOp::Ge, RelOp::Le};
        // strict inequalities dominate the data
        const RelOp op = chance(0.7) ? kOps[pick(2)] : kOps[2 + pick(2)];
        return ex::relation(op, linear_lhs(budget), linear_rhs(budget));
      }
      case Category::PairOfLinearEquations: return linear_system(budget);
      case Category::Limit: {
        preferred_ = pick_var();
        Expr body = gen(budget, kBracketStart);
        Expr target = chance(0.75) ? small_const(10) : ex::neg(ex::constant(1 + pick(10)));
        const double s = uniform01();
        const LimitSide side = s < 0.6 ? LimitSide::Both
                               : s < 0.8 ? LimitSide::Left
                                         : LimitSide::Right;
        return ex::limit(std::move(body), preferred_, std::move(target), side);
      }
      case Category::Differentiation: {
        preferred_ = pick_var();
        return ex::derivative(gen(budget, kBracketStart), preferred_);
      }
      case Category::Integral: {
        preferred_ = pick_var();
        return ex::integral(gen(budget, kBracketStart), preferred_);
      }
      case Category::FiniteIntegral: {
        preferred_ = pick_var();
        Expr body = gen(budget, kBracketStart);
        const std::uint32_t lo = static_cast<std::uint32_t>(pick(6));
        const std::uint32_t hi = lo + 1 + static_cast<std::uint32_t>(pick(10 - lo));
        return ex::finite_integral(std::move(body), preferred_, ex::constant(lo),
                                   ex::constant(hi));
      }
    }
    throw std::invalid_argument("unknown category value " + std::to_string(static_cast<int>(c)));
  }

 private:
  std::uint64_t pick(std::uint64_t n) { return uniform_below(rng_, n); }
  double uniform01() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  bool chance(double p) { return uniform01() < p; }
  Variable pick_var() { return kVariables[pick(kVariables.size())]; }

  Expr small_const(std::uint32_t max) {
    return ex::constant(static_cast<std::uint32_t>(pick(std::uint64_t{max} + 1)));
  }
  Expr coefficient() { return ex::constant(2 + static_cast<std::uint32_t>(pick(8))); }
  Expr ordinal_const() { return ex::constant(2 + static_cast<std::uint32_t>(pick(8))); }

  Expr leaf_var() { return ex::var(chance(0.6) ? preferred_ : pick_var()); }

  Expr leaf() {
    const double r = uniform01();
    if (r < 0.6) return leaf_var();
    if (r < 0.95) return small_const(opt_.max_constant);
    return ex::decimal(static_cast<std::uint32_t>(pick(10)), std::to_string(1 + pick(9)));
  }

  // Operand of "times": a simple term that does not itself start with a
  // number word.
  Expr times_operand(int budget) {
    Expr e = gen(budget, kSimple);
    if (e.is<node::Const>() || e.is<node::DecimalConst>() || e.is<node::Mul>()) return leaf_var();
    return e;
  }

  Slot arg_slot(const Slot& s) {
    if (s.closed || chance(0.55)) return kSimple;
    return kExtended;
  }

  Expr gen(int d, const Slot& s) {
    if (d <= 0) return leaf();
    enum Kind { Leaf, Chain, Frac, Mul, Square, PowOrd, PowVar, Root, Trig, Exp, Log, Neg };
    struct Option {
      Kind kind;
      double weight;
    };
    Option options[] = {
        {Leaf, 1.5},  {Chain, s.term ? 0.0 : 3.0},
        {Frac, s.closed ? 0.0 : 2.5},
        {Mul, 1.2},   {Square, 1.2},
        {PowOrd, 0.6}, {PowVar, 0.4},
        {Root, 0.8},  {Trig, 1.5},
        {Exp, 0.8},   {Log, 0.6},
        {Neg, 0.3},
    };
    double total = 0;
    for (const auto& o : options) total += o.weight;
    double r = uniform01() * total;
    Kind kind = Leaf;
    for (const auto& o : options) {
      if (r < o.weight) {
        kind = o.kind;
        break;
      }
      r -= o.weight;
    }

    const int c = d - 1;
    switch (kind) {
      case Leaf: return leaf();
      case Chain: {
        Slot left = s.bracket ? Slot{true, s.leftmost, false, false, false}
                              : Slot{false, false, true, false, false};
        Slot right{s.bracket, false, s.closed, false, true};
        Expr l = gen(c, left);
        Expr rr = gen(c, right);
        return chance(0.55) ? ex::add(std::move(l), std::move(rr))
                            : ex::sub(std::move(l), std::move(rr));
      }
      case Frac: {
        Expr num = (s.bracket && s.leftmost && chance(0.5))
                       ? gen(c, Slot{true, true, false, false, false})
                       : gen(c, kSimple);
        return ex::frac(std::move(num), gen(c, kExtended));
      }
      case Mul: return ex::mul(coefficient(), times_operand(c));
      case Square:
        return ex::pow(chance(0.85) ? leaf_var() : small_const(opt_.max_constant),
                       ex::constant(2));
      case PowOrd: return ex::pow(gen(c, arg_slot(s)), ordinal_const());
      case PowVar: return ex::pow(chance(0.5) ? leaf_var() : small_const(9), leaf_var());
      case Root: return ex::root(chance(0.6) ? ex::constant(2) : ordinal_const(), gen(c, arg_slot(s)));
      case Trig: {
        static constexpr TrigKind kKinds[] = {TrigKind::Sin, TrigKind::Cos, TrigKind::Tan};
        return ex::trig(kKinds[pick(3)], gen(c, arg_slot(s)));
      }
      case Exp: return ex::exp(gen(c, arg_slot(s)));
      case Log: {
        static constexpr std::uint32_t kBases[] = {2, 3, 5, 10};
        return ex::log(ex::constant(kBases[pick(4)]), gen(c, kBracketStart));
      }
      case Neg: return ex::neg(gen(c, arg_slot(s)));
    }
    return leaf();
  }

  // ---- linear categories ----

  Expr linear_term(int budget, Variable v) {
    if (budget <= 0) return ex::var(v);
    const double r = uniform01();
    if (r < 0.35) return ex::var(v);
    if (r < 0.85) return ex::mul(coefficient(), ex::var(v));
    return ex::frac(ex::var(v), ex::constant(2 + static_cast<std::uint32_t>(pick(9))));
  }

  Expr linear_chain(int budget) {
    if (budget <= 0) return chance(0.7) ? ex::var(pick_var()) : small_const(opt_.max_constant);
    if (chance(0.3)) return linear_term(budget, pick_var());
    Expr l = linear_chain(budget - 1);
    Expr r = chance(0.6) ? linear_term(budget - 1, pick_var()) : small_const(opt_.max_constant);
    return chance(0.5) ? ex::add(std::move(l), std::move(r)) : ex::sub(std::move(l), std::move(r));
  }

  // Depth in [1, budget] and mentions a variable.
  Expr linear_lhs(int budget) {
    const Variable v = pick_var();
    if (budget == 1 || chance(0.3)) {
      const double r = uniform01();
      if (r < 0.5) {
        Expr rhs = chance(0.5) ? small_const(opt_.max_constant) : ex::var(pick_var());
        return chance(0.5) ? ex::add(ex::var(v), std::move(rhs))
                           : ex::sub(ex::var(v), std::move(rhs));
      }
      if (r < 0.8) return ex::mul(coefficient(), ex::var(v));
      return ex::frac(ex::var(v), ex::constant(2 + static_cast<std::uint32_t>(pick(9))));
    }
    Expr l = linear_chain(budget - 1);
    Expr r = linear_term(budget - 1, v);
    return chance(0.5) ? ex::add(std::move(l), std::move(r)) : ex::sub(std::move(l), std::move(r));
  }

  Expr linear_rhs(int budget) {
    if (chance(0.75)) return small_const(opt_.max_constant);
    return linear_chain(std::min(budget, 2));
  }

  Expr linear_system(int budget) {
    const std::uint64_t a = pick(kVariables.size());
    const std::uint64_t b = (a + 1 + pick(kVariables.size() - 1)) % kVariables.size();
    const Variable v1 = kVariables[a];
    const Variable v2 = kVariables[b];
    const int term_budget = budget >= 2 ? 1 : 0;
    auto equation = [&]() {
      Expr t1 = term_budget > 0 && chance(0.5) ? ex::mul(coefficient(), ex::var(v1)) : ex::var(v1);
      Expr t2 = term_budget > 0 && chance(0.5) ? ex::mul(coefficient(), ex::var(v2)) : ex::var(v2);
      Expr lhs = chance(0.5) ? ex::add(std::move(t1), std::move(t2))
                             : ex::sub(std::move(t1), std::move(t2));
      return ex::relation(RelOp::Eq, std::move(lhs), small_const(opt_.max_constant));
    };
    Expr first = equation();
    Expr second = equation();
    return ex::system(std::move(first), std::move(second));
  }

  std::mt19937_64& rng_;
  SamplerOptions opt_;
  Variable preferred_ = Variable::X;
};

}  // namespace

Expr sample_equation(Category category, std::mt19937_64& rng, int depth_budget,
                     const SamplerOptions& options) {
  if (depth_budget < 1) throw std::invalid_argument("depth_budget must be >= 1");
  if (static_cast<unsigned>(category) >= kAllCategories.size()) {
    throw std::invalid_argument("unknown category value " +
                                std::to_string(static_cast<int>(category)));
  }
  Sampler sampler(rng, options);
  return sampler.equation(category, depth_budget);
}

}  // namespace eqd
