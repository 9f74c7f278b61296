#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <variant>

namespace eqd {

// Equation categories, in the column order used by the dataset statistics.
enum class Category : std::uint8_t {
  LinearEquation,
  Inequality,
  PairOfLinearEquations,
  Limit,
  Differentiation,
  Integral,
  FiniteIntegral,
};

inline constexpr std::array<Category, 7> kAllCategories = {
    Category::LinearEquation, Category::Inequality,      Category::PairOfLinearEquations,
    Category::Limit,          Category::Differentiation, Category::Integral,
    Category::FiniteIntegral,
};

std::string_view category_code(Category c);    // "LE", "IE", ...
Category category_from_code(std::string_view);  // throws std::invalid_argument

enum class Variable : char { X = 'x', Y = 'y', Z = 'z', T = 't' };
inline constexpr std::array<Variable, 4> kVariables = {Variable::X, Variable::Y, Variable::Z,
                                                       Variable::T};
inline char to_char(Variable v) { return static_cast<char>(v); }

enum class TrigKind : std::uint8_t { Sin, Cos, Tan };
enum class RelOp : std::uint8_t { Eq, Gt, Lt, Ge, Le };
enum class LimitSide : std::uint8_t { Both, Left, Right };

struct ExprNode;

// Immutable expression tree. Copies share structure; nodes are never mutated.
class Expr {
 public:
  explicit Expr(std::shared_ptr<const ExprNode> node) : node_(std::move(node)) {}

  const ExprNode& node() const { return *node_; }

  template <class T>
  const T* get_if() const;

  template <class T>
  bool is() const { return get_if<T>() != nullptr; }

 private:
  std::shared_ptr<const ExprNode> node_;
};

namespace node {

struct Const {
  std::uint32_t value;
};
// integer_part "." fraction_digits, e.g. {3, "14"}; fraction_digits is non-empty.
struct DecimalConst {
  std::uint32_t integer_part;
  std::string fraction_digits;
};
struct Var {
  Variable name;
};
struct Neg {
  Expr operand;
};
struct Add {
  Expr lhs, rhs;
};
struct Sub {
  Expr lhs, rhs;
};
// Scalar times expression; lhs is always Const or DecimalConst.
struct Mul {
  Expr lhs, rhs;
};
struct Frac {
  Expr numerator, denominator;
};
struct Pow {
  Expr base, exponent;
};
struct Root {
  Expr degree, radicand;
};
struct Log {
  Expr base, argument;
};
struct Exp {
  Expr argument;
};
struct Trig {
  TrigKind kind;
  Expr argument;
};
struct Integral {
  Expr integrand;
  Variable var;
};
struct FiniteIntegral {
  Expr integrand;
  Variable var;
  Expr lower, upper;
};
struct Derivative {
  Expr body;
  Variable var;
};
struct Limit {
  Expr body;
  Variable var;
  Expr target;
  LimitSide side;
};
struct Relation {
  RelOp op;
  Expr lhs, rhs;
};
// Both members are Relation(=) nodes.
struct System {
  Expr first, second;
};

}  // namespace node

struct ExprNode {
  std::variant<node::Const, node::DecimalConst, node::Var, node::Neg, node::Add, node::Sub,
               node::Mul, node::Frac, node::Pow, node::Root, node::Log, node::Exp, node::Trig,
               node::Integral, node::FiniteIntegral, node::Derivative, node::Limit,
               node::Relation, node::System>
      value;
};

template <class T>
const T* Expr::get_if() const {
  return std::get_if<T>(&node_->value);
}

// Constructors. Structural invariants (Mul lhs numeric, System members are
// equations, fraction digits non-empty) are checked and violations throw
// std::invalid_argument.
namespace ex {
Expr constant(std::uint32_t v);
Expr decimal(std::uint32_t integer_part, std::string fraction_digits);
Expr var(Variable v);
Expr var(char name);
Expr neg(Expr e);
Expr add(Expr l, Expr r);
Expr sub(Expr l, Expr r);
Expr mul(Expr scalar, Expr e);
Expr frac(Expr n, Expr d);
Expr pow(Expr base, Expr exponent);
Expr root(Expr degree, Expr radicand);
Expr log(Expr base, Expr argument);
Expr exp(Expr argument);
Expr trig(TrigKind k, Expr argument);
Expr integral(Expr integrand, Variable v);
Expr finite_integral(Expr integrand, Variable v, Expr lower, Expr upper);
Expr derivative(Expr body, Variable v);
Expr limit(Expr body, Variable v, Expr target, LimitSide side = LimitSide::Both);
Expr relation(RelOp op, Expr lhs, Expr rhs);
Expr system(Expr first, Expr second);
}  // namespace ex

bool is_variable_char(char c);

// Structural equality: same constructors and leaf values, recursively.
bool expr_equal(const Expr& a, const Expr& b);

// Rebuilds every node; the result shares no storage with the input.
Expr deep_copy(const Expr& e);

// Leaves have depth 0.
int depth(const Expr& e);

// Fully parenthesized LaTeX-like form, e.g. "((x+y)/(z))". Injective.
std::string to_canonical_string(const Expr& e);

// Root construct expected for a category's equations.
bool root_matches_category(const Expr& e, Category c);

// Knobs of the random equation sampler.
struct SamplerOptions {
  std::uint32_t max_constant = 20;
};

// Draws a random equation of the given category. A pure function of
// (category, rng state, depth_budget): the same seed always yields the same
// tree. Throws std::invalid_argument for depth_budget < 1 or an unknown
// category value.
Expr sample_equation(Category category, std::mt19937_64& rng, int depth_budget,
                     const SamplerOptions& options = {});

// Uniform integer in [0, n) drawn by rejection from the raw engine output, so
// streams are identical across standard library implementations.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n);

}  // namespace eqd
