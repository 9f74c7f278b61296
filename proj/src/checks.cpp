#include "eqdesc/checks.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <stdexcept>

#include "eqdesc/autodiff.hpp"
#include "eqdesc/desc_parser.hpp"
#include "eqdesc/metrics.hpp"
#include "eqdesc/model.hpp"
#include "eqdesc/verbalizer.hpp"

namespace eqd {

bool SuiteResult::ok() const {
  for (const auto& l : lines) {
    if (!l.pass) return false;
  }
  return !lines.empty();
}

void SuiteResult::add(std::string name, bool pass, std::string detail) {
  lines.push_back({std::move(name), pass, std::move(detail)});
}

void SuiteResult::print(std::ostream& out) const {
  for (const auto& l : lines) {
    out << (l.pass ? "PASS " : "FAIL ") << l.name;
    if (!l.detail.empty()) out << ": " << l.detail;
    out << "\n";
  }
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

SuiteResult roundtrip_suite(int samples, std::uint64_t seed, const VerbalizeFn& verbalizer) {
  SuiteResult r;
  std::mt19937_64 rng(seed);
  int passed = 0;
  std::string counterexample;
  for (int i = 0; i < samples; ++i) {
    Expr e = sample_equation(kAllCategories[static_cast<std::size_t>(i % 7)], rng, 1 + i % 5);
    const std::string text = verbalizer ? verbalizer(e) : verbalize(e).text;
    bool same = false;
    std::string got;
    try {
      Expr back = parse_description(text);
      same = expr_equal(back, e);
      got = to_canonical_string(back);
    } catch (const DescriptionError& err) {
      got = std::string("parse error: ") + err.what();
    }
    if (same) {
      ++passed;
    } else if (counterexample.empty()) {
      counterexample = "\"" + text + "\" expected " + to_canonical_string(e) + " got " + got;
    }
  }
  std::string detail = std::to_string(passed) + "/" + std::to_string(samples) + " equations";
  if (!counterexample.empty()) detail += "; counterexample " + counterexample;
  r.add("roundtrip", samples > 0 && passed == samples, detail);
  return r;
}

namespace {

using In = std::vector<Var<double>>;

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Fixed random projection to a scalar.
Var<double> project(Tape<double>& tape, Var<double> y) {
  std::mt19937_64 rng(99);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

}  // namespace

SuiteResult grad_suite() {
  SuiteResult r;
  std::mt19937_64 rng(3);
  auto prim = [&](const std::string& name, const GradFn& f, std::vector<Tensor<double>> inputs) {
    const double err = grad_check(f, std::move(inputs)).max_rel_error;
    r.add("grad " + name, err < 1e-6, fmt("max rel error %.3e", err));
  };
  prim("matmul", [](Tape<double>& t, const In& in) { return project(t, matmul(in[0], in[1])); },
       {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
  prim("bmm", [](Tape<double>& t, const In& in) { return project(t, bmm(in[0], in[1])); },
       {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)});
  prim("add", [](Tape<double>& t, const In& in) { return project(t, add(in[0], in[1])); },
       {random_tensor({2, 1, 4}, rng), random_tensor({2, 3, 1}, rng)});
  prim("sub", [](Tape<double>& t, const In& in) { return project(t, sub(in[0], in[1])); },
       {random_tensor({3, 4}, rng), random_tensor({1, 4}, rng)});
  prim("mul", [](Tape<double>& t, const In& in) { return project(t, mul(in[0], in[1])); },
       {random_tensor({3, 4}, rng), random_tensor({3, 1}, rng)});
  prim("sigmoid", [](Tape<double>& t, const In& in) { return project(t, sigmoid(in[0])); },
       {random_tensor({3, 5}, rng, -3, 3)});
  prim("tanh", [](Tape<double>& t, const In& in) { return project(t, tanh(in[0])); },
       {random_tensor({3, 5}, rng, -2, 2)});
  prim("softmax", [](Tape<double>& t, const In& in) { return project(t, softmax(in[0])); },
       {random_tensor({2, 1, 4}, rng, -3, 3)});
  prim("mean", [](Tape<double>& t, const In& in) { return project(t, mean(in[0], 1)); },
       {random_tensor({2, 3, 4}, rng)});
  prim("concat", [](Tape<double>& t, const In& in) { return project(t, concat(In{in[0], in[1]})); },
       {random_tensor({2, 3}, rng), random_tensor({2, 1}, rng)});
  prim("transpose", [](Tape<double>& t, const In& in) { return project(t, transpose_last2(in[0])); },
       {random_tensor({2, 3, 5}, rng)});
  prim("embedding", [](Tape<double>& t, const In& in) { return project(t, embedding(in[0], {2, 0, 2, 4})); },
       {random_tensor({5, 3}, rng)});
  prim("dropout", [](Tape<double>& t, const In& in) { return project(t, dropout(in[0], 0.4, true, {7, 1})); },
       {random_tensor({4, 6}, rng)});
  prim("cross_entropy",
       [](Tape<double>&, const In& in) { return cross_entropy(softmax(in[0]), {1, 0, 3}, {1.0, 0.5, 0.0}); },
       {random_tensor({3, 4}, rng, -2, 2)});
  prim("softmax_cross_entropy",
       [](Tape<double>&, const In& in) { return softmax_cross_entropy(in[0], {1, 0, 3}, {1.0, 0.5, 0.0}); },
       {random_tensor({3, 4}, rng, -2, 2)});
  prim("conv2d",
       [](Tape<double>& t, const In& in) { return project(t, conv2d(in[0], in[1], in[2], 2, 1)); },
       {random_tensor({2, 2, 6, 7}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
  for (CellKind c : {CellKind::Lstm, CellKind::Gru, CellKind::Rnn}) {
    const GradCheckResult g = full_model_grad_check(c, 1);
    r.add("grad full model " + cell_name(c), g.max_rel_error < 1e-4,
          fmt("max rel error %.3e", g.max_rel_error) + " over " + std::to_string(g.coordinates) + " coordinates");
  }
  return r;
}

SuiteResult metrics_suite() {
  SuiteResult r;
  const std::vector<std::string> refs = {"x plus y equal to two", "integral of x with respect to x",
                                         "the limit of x as x approaches zero", "z over two greater than y"};
  std::vector<Tokens> c;
  std::vector<std::vector<Tokens>> rr;
  for (const auto& s : refs) {
    c.push_back(split_words(s));
    rr.push_back({split_words(s)});
  }
  double worst = 0.0;
  for (int n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(bleu(c, rr, n) - 1.0));
  worst = std::max(worst, std::abs(rouge_l(c, rr) - 1.0));
  for (double s : cider_scores(c, rr)) worst = std::max(worst, std::abs(s - 1.0));
  r.add("metrics identity", worst < 1e-9, fmt("max deviation from 1: %.3e", worst));

  const double b1 = bleu({split_words("x plus y")}, {{split_words("x plus y all over z")}}, 1);
  r.add("metrics bleu-1 brevity example", std::abs(b1 - std::exp(-1.0)) < 1e-9, fmt("%.10f", b1));

  const double rl = rouge_l({split_words("x over z")}, {{split_words("x plus y all over z")}});
  r.add("metrics rouge-l example", std::abs(rl - 0.6288659793814433) < 1e-9, fmt("%.10f", rl));

  const std::vector<std::string> toy_refs = {"x plus y equal to two", "x minus y equal to two",
                                             "x plus y greater than two"};
  const std::vector<std::string> toy_cands = {"x plus y equal to two", "x minus y equal to three",
                                              "y plus x greater than two"};
  std::vector<Tokens> tc;
  std::vector<std::vector<Tokens>> tr;
  for (std::size_t i = 0; i < 3; ++i) {
    tc.push_back(split_words(toy_cands[i]));
    tr.push_back({split_words(toy_refs[i])});
  }
  const auto cs = cider_scores(tc, tr);
  const double expected[3] = {1.0, 0.7869841570578908, 0.44419316309228035};
  double cerr = 0.0;
  for (int i = 0; i < 3; ++i) cerr = std::max(cerr, std::abs(cs[static_cast<std::size_t>(i)] - expected[i]));
  r.add("metrics cider toy corpus", cerr < 1e-9, fmt("max error %.3e", cerr));

  bool threw = false;
  try {
    cider({split_words("a"), split_words("b")}, {{split_words("x y")}, {split_words("x y")}});
  } catch (const std::invalid_argument&) {
    threw = true;
  }
  r.add("metrics cider rejects a degenerate corpus", threw);
  return r;
}

}  // namespace eqd
