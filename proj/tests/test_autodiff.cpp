#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "eqdesc/autodiff.hpp"

using namespace eqd;

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Scalarizes an output by a fixed random projection so every output
// coordinate contributes a distinct weight to the loss.
Var<double> project(Tape<double>& tape, Var<double> y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Var<double> w = tape.constant(random_tensor(y.shape(), rng));
  return sum(mul(y, w));
}

double check(const GradFn& f, std::vector<Tensor<double>> inputs) {
  return grad_check(f, std::move(inputs)).max_rel_error;
}

}  // namespace

TEST_CASE("softmax and sigmoid basics") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 3}, {0.0, 0.0, 0.0}));
  auto y = softmax(x);
  for (double v : y.value().data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto z = tape.leaf(Tensor<double>({1}, {0.0}));
  auto s = sigmoid(z);
  CHECK(s.value().data[0] == 0.5);
  tape.backward(s);
  CHECK(tape.grad_tensor(z).data[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax rows are distributions") {
  std::mt19937_64 rng(5);
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({7, 11}, rng, -30.0, 30.0));
  auto y = softmax(x);
  for (int r = 0; r < 7; ++r) {
    double s = 0.0;
    for (int j = 0; j < 11; ++j) {
      const double v = y.value().data[static_cast<std::size_t>(r * 11 + j)];
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(1);
  auto f = [](Tape<double>& t, const std::vector<Var<double>>& in) { return project(t, matmul(in[0], in[1])); };
  CHECK(check(f, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}) < 1e-6);
  CHECK(check(f, {random_tensor({2, 3, 4}, rng), random_tensor({4, 1}, rng)}) < 1e-6);
  CHECK(check(f, {random_tensor({1, 1}, rng), random_tensor({1, 5}, rng)}) < 1e-6);
}

TEST_CASE("grad_check of sum is exact, sum(x*x) has gradient 2x") {
  auto f = [](Tape<double>&, const std::vector<Var<double>>& in) { return sum(in[0]); };
  std::mt19937_64 rng(2);
  CHECK(check(f, {random_tensor({4, 5}, rng)}) < 1e-10);

  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, {1.0, 2.0}));
  tape.backward(sum(mul(x, x)));
  const auto g = tape.grad_tensor(x);
  CHECK(g.data[0] == 2.0);
  CHECK(g.data[1] == 4.0);
}

TEST_CASE("every primitive passes grad_check, including size-1 dims") {
  std::mt19937_64 rng(3);
  using In = std::vector<Var<double>>;

  SUBCASE("bmm") {
    auto f = [](Tape<double>& t, const In& in) { return project(t, bmm(in[0], in[1])); };
    CHECK(check(f, {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)}) < 1e-6);
    CHECK(check(f, {random_tensor({1, 1, 3}, rng), random_tensor({1, 3, 1}, rng)}) < 1e-6);
  }
  SUBCASE("add/sub/mul with broadcasting") {
    for (auto op : {0, 1, 2}) {
      auto f = [op](Tape<double>& t, const In& in) {
        Var<double> y = op == 0 ? add(in[0], in[1]) : op == 1 ? sub(in[0], in[1]) : mul(in[0], in[1]);
        return project(t, y);
      };
      CHECK(check(f, {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}) < 1e-6);
      CHECK(check(f, {random_tensor({3, 4}, rng), random_tensor({1, 4}, rng)}) < 1e-6);
      CHECK(check(f, {random_tensor({2, 1, 4}, rng), random_tensor({2, 3, 1}, rng)}) < 1e-6);
      CHECK(check(f, {random_tensor({1}, rng), random_tensor({1}, rng)}) < 1e-6);
    }
  }
  SUBCASE("scale/sigmoid/tanh/softmax") {
    auto fs = [](Tape<double>& t, const In& in) { return project(t, scale(in[0], -1.7)); };
    auto fg = [](Tape<double>& t, const In& in) { return project(t, sigmoid(in[0])); };
    auto ft = [](Tape<double>& t, const In& in) { return project(t, tanh(in[0])); };
    auto fm = [](Tape<double>& t, const In& in) { return project(t, softmax(in[0])); };
    for (const Shape& s : {Shape{3, 5}, Shape{1, 1}, Shape{2, 1, 4}}) {
      CHECK(check(fs, {random_tensor(s, rng)}) < 1e-6);
      CHECK(check(fg, {random_tensor(s, rng, -3, 3)}) < 1e-6);
      CHECK(check(ft, {random_tensor(s, rng, -2, 2)}) < 1e-6);
      CHECK(check(fm, {random_tensor(s, rng, -3, 3)}) < 1e-6);
    }
  }
  SUBCASE("mean over each axis") {
    for (int axis : {0, 1, 2, -1}) {
      auto f = [axis](Tape<double>& t, const In& in) { return project(t, mean(in[0], axis)); };
      CHECK(check(f, {random_tensor({2, 3, 4}, rng)}) < 1e-6);
      CHECK(check(f, {random_tensor({1, 1, 1}, rng)}) < 1e-6);
    }
  }
  SUBCASE("concat/slice/reshape") {
    auto fc = [](Tape<double>& t, const In& in) { return project(t, concat(In{in[0], in[1], in[2]})); };
    CHECK(check(fc, {random_tensor({2, 3}, rng), random_tensor({2, 1}, rng), random_tensor({2, 4}, rng)}) < 1e-6);
    auto fl = [](Tape<double>& t, const In& in) { return project(t, slice_last(in[0], 1, 3)); };
    CHECK(check(fl, {random_tensor({3, 4}, rng)}) < 1e-6);
    auto fr = [](Tape<double>& t, const In& in) { return project(t, reshape(in[0], {4, 3})); };
    CHECK(check(fr, {random_tensor({2, 6}, rng)}) < 1e-6);
    auto ft = [](Tape<double>& t, const In& in) { return project(t, transpose_last2(in[0])); };
    CHECK(check(ft, {random_tensor({2, 3, 5}, rng)}) < 1e-6);
    CHECK(check(ft, {random_tensor({1, 4}, rng)}) < 1e-6);
  }
  SUBCASE("embedding with repeated ids") {
    auto f = [](Tape<double>& t, const In& in) { return project(t, embedding(in[0], {2, 0, 2, 4})); };
    CHECK(check(f, {random_tensor({5, 3}, rng)}) < 1e-6);
  }
  SUBCASE("dropout in train mode") {
    auto f = [](Tape<double>& t, const In& in) { return project(t, dropout(in[0], 0.4, true, {7, 1})); };
    CHECK(check(f, {random_tensor({4, 6}, rng)}) < 1e-6);
  }
  SUBCASE("cross entropy on probabilities and logits") {
    const std::vector<int> targets{1, 0, 3};
    const std::vector<double> weights{1.0, 0.5, 0.0};
    auto fp = [&](Tape<double>&, const In& in) { return cross_entropy(softmax(in[0]), targets, weights); };
    auto fl = [&](Tape<double>&, const In& in) { return softmax_cross_entropy(in[0], targets, weights); };
    auto x = random_tensor({3, 4}, rng, -2, 2);
    CHECK(check(fp, {x}) < 1e-6);
    CHECK(check(fl, {x}) < 1e-6);
    // the fused form computes the same loss
    Tape<double> tape;
    auto v = tape.constant(x);
    CHECK(cross_entropy(softmax(v), targets, weights).value().data[0] ==
          doctest::Approx(softmax_cross_entropy(v, targets, weights).value().data[0]).epsilon(1e-12));
    // single-class rows
    auto f1 = [](Tape<double>&, const In& in) { return cross_entropy(in[0], {0}, {1.0}); };
    CHECK(check(f1, {Tensor<double>({1, 1}, {0.7})}) < 1e-6);
  }
  SUBCASE("conv2d valid and padded, with and without bias") {
    auto fb = [](int stride, int pad) {
      return [=](Tape<double>& t, const In& in) { return project(t, conv2d(in[0], in[1], in[2], stride, pad)); };
    };
    auto fn = [](Tape<double>& t, const In& in) { return project(t, conv2d(in[0], in[1], Var<double>{}, 2, 0)); };
    CHECK(check(fb(1, 0), {random_tensor({2, 2, 5, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}) < 1e-6);
    CHECK(check(fb(2, 1), {random_tensor({2, 2, 6, 7}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}) < 1e-6);
    CHECK(check(fb(1, 0), {random_tensor({1, 1, 1, 1}, rng), random_tensor({1, 1, 1, 1}, rng), random_tensor({1}, rng)}) < 1e-6);
    CHECK(check(fn, {random_tensor({1, 3, 7, 5}, rng), random_tensor({2, 3, 3, 3}, rng)}) < 1e-6);
  }
}

TEST_CASE("conv2d fast path matches the direct reference") {
  std::mt19937_64 rng(11);
  for (auto [stride, pad] : {std::pair{1, 0}, std::pair{2, 0}, std::pair{2, 1}, std::pair{3, 2}}) {
    auto x = random_tensor({3, 4, 13, 17}, rng);
    auto w = random_tensor({5, 4, 3, 3}, rng);
    auto b = random_tensor({5}, rng);
    Tape<double> tape;
    auto y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b), stride, pad);
    auto ref = conv2d_reference(x, w, &b, stride, pad);
    REQUIRE(y.shape() == ref.shape);
    double err = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(ref.data[i] - y.value().data[i]));
    CHECK(err < 1e-12);
  }
}

TEST_CASE("shape errors name both shapes") {
  Tape<float> tape;
  auto a = tape.leaf(Tensor<float>({3, 4}));
  auto b = tape.leaf(Tensor<float>({5, 2}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3, 4]") != std::string::npos);
    CHECK(msg.find("[5, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mean(a, 2), ShapeError);
  CHECK_THROWS_AS(reshape(a, {5}), ShapeError);
  CHECK_THROWS_AS(dropout(a, 1.0, true, {}), std::invalid_argument);
  CHECK_THROWS_AS(dropout(a, -0.1, true, {}), std::invalid_argument);
}

TEST_CASE("dropout identities and determinism") {
  Tape<float> tape;
  std::mt19937_64 rng(4);
  auto x = tape.constant(tensor_cast<float>(random_tensor({8, 8}, rng)));
  CHECK(dropout(x, 0.5, false, {1, 2}).value().data == x.value().data);
  CHECK(dropout(x, 0.0, true, {1, 2}).value().data == x.value().data);
  auto d1 = dropout(x, 0.5, true, {1, 2});
  auto d2 = dropout(x, 0.5, true, {1, 2});
  auto d3 = dropout(x, 0.5, true, {1, 3});
  CHECK(d1.value().data == d2.value().data);
  CHECK(d1.value().data != d3.value().data);
  int zeros = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    const float v = d1.value().data[i];
    if (v == 0.0f) ++zeros;
    else CHECK(v == doctest::Approx(2.0f * x.value().data[i]));
  }
  CHECK(zeros > 16);
  CHECK(zeros < 48);
}

TEST_CASE("backward visits each node once, linear in tape length") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1}, {0.3}));
  Var<double> y = x;
  for (int i = 0; i < 100; ++i) y = tanh(add(y, x));
  auto loss = sum(y);
  tape.backward(loss);
  // 200 ops in the loop plus the sum
  CHECK(tape.backward_visits() == 201);
  CHECK(tape.size() == 202);
}

TEST_CASE("gradients accumulate over shared inputs") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, {1.5, -2.0}));
  tape.backward(sum(add(mul(x, x), x)));
  const auto g = tape.grad_tensor(x);
  CHECK(g.data[0] == doctest::Approx(4.0));
  CHECK(g.data[1] == doctest::Approx(-3.0));
}

TEST_CASE("sgd_step") {
  SUBCASE("lr 0 leaves params unchanged") {
    Tensor<double> p({3}, {1.0, -2.0, 3.0}), v;
    const auto before = p.data;
    sgd_step(p, v, {0.5, 0.5, 0.5}, {0.0, 0.5, 1e-4});
    CHECK(p.data == before);
  }
  SUBCASE("plain gradient step") {
    Tensor<double> p({2}, {1.0, 2.0}), v;
    sgd_step(p, v, {0.25, -0.5}, {0.1, 0.0, 0.0});
    CHECK(p.data[0] == 1.0 - 0.1 * 0.25);
    CHECK(p.data[1] == 2.0 - 0.1 * -0.5);
  }
  SUBCASE("two momentum steps against the hand recurrence") {
    const double lr = 0.05, mu = 0.5, wd = 1e-4;
    const double g1 = 0.8, g2 = -0.3;
    double p = 1.25, v = 0.0;
    v = mu * v + g1 + wd * p;
    p = p - lr * v;
    v = mu * v + g2 + wd * p;
    p = p - lr * v;
    Tensor<double> tp({1}, {1.25}), tv;
    sgd_step(tp, tv, {g1}, {lr, mu, wd});
    sgd_step(tp, tv, {g2}, {lr, mu, wd});
    CHECK(std::abs(tp.data[0] - p) < 1e-12);
    CHECK(std::abs(tv.data[0] - v) < 1e-12);
  }
  SUBCASE("shape mismatch") {
    Tensor<double> p({2}), v;
    CHECK_THROWS_AS(sgd_step(p, v, {1.0, 2.0, 3.0}, {}), ShapeError);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto path = (std::filesystem::temp_directory_path() / "eqdesc_ckpt_test.bin").string();
  std::map<std::string, Tensor<float>> m;
  m.emplace("b", Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}));
  m.emplace("a/x", Tensor<float>({1}, {-0.5f}));
  save_tensors(path, m);
  auto back = load_tensors<float>(path);
  REQUIRE(back.size() == 2);
  CHECK(back.at("b").shape == Shape{2, 3});
  CHECK(back.at("b").data == m.at("b").data);
  CHECK(back.at("a/x").data == m.at("a/x").data);
  CHECK_THROWS(load_tensors<double>(path));
  std::filesystem::remove(path);
  CHECK_THROWS(load_tensors<float>(path));
}
