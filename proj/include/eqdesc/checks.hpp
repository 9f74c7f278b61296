#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "eqdesc/expr.hpp"

namespace eqd {

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteResult {
  std::vector<CheckLine> lines;

  bool ok() const;
  void add(std::string name, bool pass, std::string detail = {});
  void print(std::ostream& out) const;
};

using VerbalizeFn = std::function<std::string(const Expr&)>;

// parse(verbalize(e)) == e over `samples` equations cycling through the
// categories with depth budgets 1..5. The first counterexample is reported.
// `verbalizer` replaces the real one (used to test the suite itself).
SuiteResult roundtrip_suite(int samples = 10000, std::uint64_t seed = 20240601, const VerbalizeFn& verbalizer = {});

// Finite-difference checks of every autodiff primitive in 64-bit (bound 1e-6)
// and of the full training loss for each decoder cell (bound 1e-4).
SuiteResult grad_suite();

// Identity scores and the hand-worked BLEU, ROUGE-L and CIDEr examples.
SuiteResult metrics_suite();

}  // namespace eqd
