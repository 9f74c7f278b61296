#include "eqdesc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "eqdesc/parallel.hpp"
#include "kernels.hpp"

namespace eqd {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Tape

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return record(std::move(value), false, nullptr);
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <class T>
Var<T> Tape<T>::param(const Tensor<T>& external, bool requires_grad) {
  Node n;
  n.external = &external;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <class T>
const Tensor<T>& Tape<T>::value(int id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  return n.external != nullptr ? *n.external : n.value;
}

template <class T>
std::vector<T>& Tape<T>::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(value(id).size(), T(0));
  return n.grad;
}

template <class T>
Tensor<T> Tape<T>::grad_tensor(Var<T> v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  Tensor<T> t(value(v.id).shape);
  if (!n.grad.empty()) t.data = n.grad;
  return t;
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: variable belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward: loss must be a single value, got shape " + shape_str(value(loss.id).shape));
  }
  if (!nodes_[static_cast<std::size_t>(loss.id)].requires_grad) return;
  grad_buffer(loss.id)[0] += T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && !n.grad.empty()) {
      n.backward(*this, id);
      ++visits_;
    }
  }
}

namespace {

template <class T>
bool any_grad(std::initializer_list<Var<T>> vs) {
  for (const auto& v : vs) {
    if (v.valid() && v.tape->requires_grad(v.id)) return true;
  }
  return false;
}

template <class T>
Tape<T>& same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  return *a.tape;
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// ---- broadcasting ----

struct Broadcast {
  Shape out;
  std::size_t inner = 1;        // length of the last axis of out
  std::size_t inner_a = 1;      // 0 if a broadcasts along the last axis
  std::size_t inner_b = 1;
  std::vector<std::size_t> outer_a, outer_b;  // offsets per outer index
};

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size() || a.empty()) mismatch(op, a, b);
  Broadcast bc;
  const std::size_t r = a.size();
  bc.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (a[i] == b[i] || b[i] == 1) bc.out[i] = a[i];
    else if (a[i] == 1) bc.out[i] = b[i];
    else mismatch(op, a, b);
  }
  auto strides = [&](const Shape& s) {
    std::vector<std::size_t> st(r, 0);
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
      st[i] = s[i] == 1 && bc.out[i] != 1 ? 0 : acc;
      acc *= static_cast<std::size_t>(s[i]);
    }
    return st;
  };
  const auto sa = strides(a);
  const auto sb = strides(b);
  bc.inner = static_cast<std::size_t>(bc.out[r - 1]);
  bc.inner_a = sa[r - 1];
  bc.inner_b = sb[r - 1];
  std::size_t outer = 1;
  for (std::size_t i = 0; i + 1 < r; ++i) outer *= static_cast<std::size_t>(bc.out[i]);
  bc.outer_a.resize(outer);
  bc.outer_b.resize(outer);
  std::vector<int> idx(r, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i + 1 < r; ++i) {
      oa += sa[i] * static_cast<std::size_t>(idx[i]);
      ob += sb[i] * static_cast<std::size_t>(idx[i]);
    }
    bc.outer_a[o] = oa;
    bc.outer_b[o] = ob;
    for (std::size_t i = r - 1; i-- > 0;) {
      if (++idx[i] < bc.out[i]) break;
      idx[i] = 0;
    }
  }
  return bc;
}

enum class BinOp { Add, Sub, Mul };

template <class T>
Var<T> binary(Var<T> a, Var<T> b, BinOp op, const char* name) {
  Tape<T>& tape = same_tape(a, b, name);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  auto bc = std::make_shared<Broadcast>(make_broadcast(A.shape, B.shape, name));
  Tensor<T> out(bc->out);
  const std::size_t n = bc->inner;
  for (std::size_t o = 0; o < bc->outer_a.size(); ++o) {
    const T* pa = A.data.data() + bc->outer_a[o];
    const T* pb = B.data.data() + bc->outer_b[o];
    T* po = out.data.data() + o * n;
    const std::size_t ia = bc->inner_a, ib = bc->inner_b;
    switch (op) {
      case BinOp::Add:
        for (std::size_t j = 0; j < n; ++j) po[j] = pa[j * ia] + pb[j * ib];
        break;
      case BinOp::Sub:
        for (std::size_t j = 0; j < n; ++j) po[j] = pa[j * ia] - pb[j * ib];
        break;
      case BinOp::Mul:
        for (std::size_t j = 0; j < n; ++j) po[j] = pa[j * ia] * pb[j * ib];
        break;
    }
  }
  const int ia_id = a.id, ib_id = b.id;
  return tape.record(std::move(out), any_grad({a, b}), [=](Tape<T>& t, int self) {
    const std::vector<T>& g = t.grad(self);
    const std::size_t n = bc->inner;
    const std::size_t sa = bc->inner_a, sb = bc->inner_b;
    if (t.requires_grad(ia_id)) {
      std::vector<T>& ga = t.grad_buffer(ia_id);
      const T* vb = t.value(ib_id).data.data();
      for (std::size_t o = 0; o < bc->outer_a.size(); ++o) {
        T* pa = ga.data() + bc->outer_a[o];
        const T* pg = g.data() + o * n;
        if (op == BinOp::Mul) {
          const T* pb = vb + bc->outer_b[o];
          for (std::size_t j = 0; j < n; ++j) pa[j * sa] += pg[j] * pb[j * sb];
        } else {
          for (std::size_t j = 0; j < n; ++j) pa[j * sa] += pg[j];
        }
      }
    }
    if (t.requires_grad(ib_id)) {
      std::vector<T>& gb = t.grad_buffer(ib_id);
      const T* va = t.value(ia_id).data.data();
      for (std::size_t o = 0; o < bc->outer_b.size(); ++o) {
        T* pb = gb.data() + bc->outer_b[o];
        const T* pg = g.data() + o * n;
        if (op == BinOp::Mul) {
          const T* pa = va + bc->outer_a[o];
          for (std::size_t j = 0; j < n; ++j) pb[j * sb] += pg[j] * pa[j * sa];
        } else if (op == BinOp::Sub) {
          for (std::size_t j = 0; j < n; ++j) pb[j * sb] -= pg[j];
        } else {
          for (std::size_t j = 0; j < n; ++j) pb[j * sb] += pg[j];
        }
      }
    }
  });
}

template <class T>
T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Uniform in [0,1) from a counter.
double dropout_uniform(DropoutKey key, std::uint64_t i) {
  const std::uint64_t h = mix_key(mix_key(key.seed, key.stream), i);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

template <class T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo,
            T* cols) {
  const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        T* row = cols + (static_cast<std::size_t>(c * kh + u) * kw + v) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + u;
          T* r = row + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(r, r + Wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + v;
            r[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo,
                T* x) {
  const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        const T* row = cols + (static_cast<std::size_t>(c * kh + u) * kw + v) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + u;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (static_cast<std::size_t>(c) * H + iy) * W;
          const T* r = row + static_cast<std::size_t>(oy) * Wo;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + v;
            if (ix >= 0 && ix < W) dst[ix] += r[ox];
          }
        }
      }
    }
  }
}

struct ConvGeom {
  int B, C, H, W, Co, kh, kw, Ho, Wo;
};

ConvGeom conv_geometry(const Shape& x, const Shape& w, int stride, int padding) {
  if (x.size() != 4 || w.size() != 4 || x[1] != w[1]) mismatch("conv2d", x, w);
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride or padding");
  ConvGeom g{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0};
  const int hn = g.H + 2 * padding - g.kh;
  const int wn = g.W + 2 * padding - g.kw;
  if (hn < 0 || wn < 0) mismatch("conv2d", x, w);
  g.Ho = hn / stride + 1;
  g.Wo = wn / stride + 1;
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// primitives

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "matmul");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.rank() < 1 || B.rank() != 2 || A.dim(-1) != B.dim(0)) mismatch("matmul", A.shape, B.shape);
  const int K = B.dim(0), N = B.dim(1);
  const int M = static_cast<int>(A.size() / static_cast<std::size_t>(std::max(1, K)));
  Shape os = A.shape;
  os.back() = N;
  Tensor<T> out(os);
  kernels::gemm_nn(M, N, K, A.data.data(), B.data.data(), out.data.data(), false);
  const int ia = a.id, ib = b.id;
  return tape.record(std::move(out), any_grad({a, b}), [=](Tape<T>& t, int self) {
    const T* g = t.grad(self).data();
    if (t.requires_grad(ia)) {
      kernels::gemm_nt(M, K, N, g, t.value(ib).data.data(), t.grad_buffer(ia).data(), true);
    }
    if (t.requires_grad(ib)) {
      kernels::gemm_tn(K, N, M, t.value(ia).data.data(), g, t.grad_buffer(ib).data(), true);
    }
  });
}

template <class T>
Var<T> bmm(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "bmm");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0) || A.dim(2) != B.dim(1)) {
    mismatch("bmm", A.shape, B.shape);
  }
  const int Bn = A.dim(0), M = A.dim(1), K = A.dim(2), N = B.dim(2);
  Tensor<T> out({Bn, M, N});
  for (int i = 0; i < Bn; ++i) {
    kernels::gemm_nn(M, N, K, A.data.data() + static_cast<std::size_t>(i) * M * K,
                     B.data.data() + static_cast<std::size_t>(i) * K * N,
                     out.data.data() + static_cast<std::size_t>(i) * M * N, false);
  }
  const int ia = a.id, ib = b.id;
  return tape.record(std::move(out), any_grad({a, b}), [=](Tape<T>& t, int self) {
    const T* g = t.grad(self).data();
    const bool need_a = t.requires_grad(ia), need_b = t.requires_grad(ib);
    T* ga = need_a ? t.grad_buffer(ia).data() : nullptr;
    T* gb = need_b ? t.grad_buffer(ib).data() : nullptr;
    const T* va = t.value(ia).data.data();
    const T* vb = t.value(ib).data.data();
    for (int i = 0; i < Bn; ++i) {
      const T* gi = g + static_cast<std::size_t>(i) * M * N;
      if (need_a) {
        kernels::gemm_nt(M, K, N, gi, vb + static_cast<std::size_t>(i) * K * N,
                         ga + static_cast<std::size_t>(i) * M * K, true);
      }
      if (need_b) {
        kernels::gemm_tn(K, N, M, va + static_cast<std::size_t>(i) * M * K, gi,
                         gb + static_cast<std::size_t>(i) * K * N, true);
      }
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(a, b, BinOp::Add, "add");
}
template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(a, b, BinOp::Sub, "sub");
}
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(a, b, BinOp::Mul, "mul");
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= s;
  const int ia = a.id;
  return a.tape->record(std::move(out), any_grad({a}), [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v = sigmoid_value(v);
  const int ia = a.id;
  return a.tape->record(std::move(out), any_grad({a}), [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).data;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v = std::tanh(v);
  const int ia = a.id;
  return a.tape->record(std::move(out), any_grad({a}), [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).data;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <class T>
Var<T> softmax(Var<T> a) {
  Tensor<T> out = a.value();
  if (out.rank() < 1 || out.dim(-1) == 0) throw ShapeError("softmax: empty last axis in " + shape_str(out.shape));
  const std::size_t n = static_cast<std::size_t>(out.dim(-1));
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    T* p = out.data.data() + r * n;
    const T mx = *std::max_element(p, p + n);
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = std::exp(p[j] - mx);
      s += p[j];
    }
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < n; ++j) p[j] *= inv;
  }
  const int ia = a.id;
  return a.tape->record(std::move(out), any_grad({a}), [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).data;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * n;
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += g[o + j] * y[o + j];
      for (std::size_t j = 0; j < n; ++j) ga[o + j] += y[o + j] * (g[o + j] - dot);
    }
  });
}

template <class T>
Var<T> mean(Var<T> a, int axis) {
  const Tensor<T>& A = a.value();
  const int r = A.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("mean: axis out of range for shape " + shape_str(A.shape));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(A.shape[i]);
  for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(A.shape[i]);
  const std::size_t n = static_cast<std::size_t>(A.shape[axis]);
  if (n == 0) throw ShapeError("mean: empty axis in " + shape_str(A.shape));
  Shape os = A.shape;
  os.erase(os.begin() + axis);
  if (os.empty()) os = {1};
  Tensor<T> out(os);
  const T inv = T(1) / static_cast<T>(n);
  for (std::size_t o = 0; o < outer; ++o) {
    T* po = out.data.data() + o * inner;
    for (std::size_t k = 0; k < n; ++k) {
      const T* pa = A.data.data() + (o * n + k) * inner;
      for (std::size_t i = 0; i < inner; ++i) po[i] += pa[i];
    }
    for (std::size_t i = 0; i < inner; ++i) po[i] *= inv;
  }
  const int ia = a.id;
  return a.tape->record(std::move(out), any_grad({a}), [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t k = 0; k < n; ++k) {
        T* pa = ga.data() + (o * n + k) * inner;
        const T* pg = g.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) pa[i] += pg[i] * inv;
      }
    }
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  const Tensor<T>& A = a.value();
  T s = T(0);
  for (T v : A.data) s += v;
  const int ia = a.id;
  return a.tape->record(Tensor<T>({1}, {s}), any_grad({a}), [=](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad_buffer(ia)) v += g;
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape<T>& tape = *parts[0].tape;
  const Shape& s0 = parts[0].shape();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool grad = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (p.tape != &tape || s.size() != s0.size() || !std::equal(s.begin(), s.end() - 1, s0.begin())) {
      mismatch("concat", s0, s);
    }
    widths.push_back(static_cast<std::size_t>(s.back()));
    total += widths.back();
    grad = grad || tape.requires_grad(p.id);
  }
  Shape os = s0;
  os.back() = static_cast<int>(total);
  Tensor<T> out(os);
  const std::size_t rows = out.size() / std::max<std::size_t>(1, total);
  std::size_t off = 0;
  std::vector<int> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].value().data;
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src.data() + r * widths[k], widths[k], out.data.data() + r * total + off);
    }
    off += widths[k];
    ids.push_back(parts[k].id);
  }
  return tape.record(std::move(out), grad, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        auto& gk = t.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) gk[r * widths[k] + j] += g[r * total + off + j];
        }
      }
      off += widths[k];
    }
  });
}

template <class T>
Var<T> slice_last(Var<T> a, int begin, int end) {
  const Tensor<T>& A = a.value();
  if (A.rank() < 1 || begin < 0 || end > A.dim(-1) || begin >= end) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for shape " + shape_str(A.shape));
  }
  const std::size_t n = static_cast<std::size_t>(A.dim(-1));
  const std::size_t w = static_cast<std::size_t>(end - begin);
  const std::size_t rows = A.size() / n;
  Shape os = A.shape;
  os.back() = end - begin;
  Tensor<T> out(os);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(A.data.data() + r * n + static_cast<std::size_t>(begin), w, out.data.data() + r * w);
  }
  const int ia = a.id;
  return a.tape->record(std::move(out), any_grad({a}), [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) ga[r * n + static_cast<std::size_t>(begin) + j] += g[r * w + j];
    }
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  const Tensor<T>& A = a.value();
  if (shape_size(shape) != A.size()) mismatch("reshape", A.shape, shape);
  Tensor<T> out(std::move(shape), A.data);
  const int ia = a.id;
  return a.tape->record(std::move(out), any_grad({a}), [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <class T>
Var<T> transpose_last2(Var<T> a) {
  const Tensor<T>& A = a.value();
  if (A.rank() < 2) throw ShapeError("transpose_last2: rank < 2 in " + shape_str(A.shape));
  const std::size_t X = static_cast<std::size_t>(A.dim(-2)), Y = static_cast<std::size_t>(A.dim(-1));
  const std::size_t mats = A.size() / std::max<std::size_t>(1, X * Y);
  Shape os = A.shape;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor<T> out(os);
  for (std::size_t b = 0; b < mats; ++b) {
    const T* src = A.data.data() + b * X * Y;
    T* dst = out.data.data() + b * X * Y;
    for (std::size_t x = 0; x < X; ++x) {
      for (std::size_t y = 0; y < Y; ++y) dst[y * X + x] = src[x * Y + y];
    }
  }
  const int ia = a.id;
  return a.tape->record(std::move(out), any_grad({a}), [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t b = 0; b < mats; ++b) {
      const T* src = g.data() + b * X * Y;
      T* dst = ga.data() + b * X * Y;
      for (std::size_t x = 0; x < X; ++x) {
        for (std::size_t y = 0; y < Y; ++y) dst[x * Y + y] += src[y * X + x];
      }
    }
  });
}

template <class T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
  const Tensor<T>& E = table.value();
  if (E.rank() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_str(E.shape));
  const int K = E.dim(0), m = E.dim(1);
  Tensor<T> out({static_cast<int>(ids.size()), m});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= K) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(K) + ")");
    }
    std::copy_n(E.data.data() + static_cast<std::size_t>(ids[i]) * m, m, out.data.data() + i * m);
  }
  const int it = table.id;
  return table.tape->record(std::move(out), any_grad({table}), [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ge = t.grad_buffer(it);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      T* row = ge.data() + static_cast<std::size_t>(ids[i]) * m;
      const T* gi = g.data() + i * m;
      for (int j = 0; j < m; ++j) row[j] += gi[j];
    }
  });
}

template <class T>
Var<T> dropout(Var<T> a, double rate, bool train, DropoutKey key) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) return a;
  const Tensor<T>& A = a.value();
  auto mask = std::make_shared<std::vector<T>>(A.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out = A;
  for (std::size_t i = 0; i < A.size(); ++i) {
    (*mask)[i] = dropout_uniform(key, i) >= rate ? keep_scale : T(0);
    out.data[i] *= (*mask)[i];
  }
  const int ia = a.id;
  return a.tape->record(std::move(out), any_grad({a}), [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
  });
}

namespace {

template <class T>
void check_targets(const Tensor<T>& P, const std::vector<int>& targets, std::size_t n_weights,
                   const char* op) {
  if (P.rank() != 2 || static_cast<std::size_t>(P.dim(0)) != targets.size() ||
      n_weights != targets.size()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(P.shape) + " with " +
                     std::to_string(targets.size()) + " targets and " + std::to_string(n_weights) +
                     " weights");
  }
  for (int t : targets) {
    if (t < 0 || t >= P.dim(1)) throw std::out_of_range(std::string(op) + ": target " + std::to_string(t));
  }
}

}  // namespace

template <class T>
Var<T> cross_entropy(Var<T> probs, const std::vector<int>& targets, const std::vector<T>& weights) {
  const Tensor<T>& P = probs.value();
  check_targets(P, targets, weights.size(), "cross_entropy");
  const std::size_t K = static_cast<std::size_t>(P.dim(1));
  T loss = T(0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (weights[i] != T(0)) loss -= weights[i] * std::log(P.data[i * K + static_cast<std::size_t>(targets[i])]);
  }
  const int ip = probs.id;
  return probs.tape->record(Tensor<T>({1}, {loss}), any_grad({probs}), [=](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    const auto& p = t.value(ip).data;
    auto& gp = t.grad_buffer(ip);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (weights[i] == T(0)) continue;
      const std::size_t k = i * K + static_cast<std::size_t>(targets[i]);
      gp[k] -= g * weights[i] / p[k];
    }
  });
}

template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& targets, const std::vector<T>& weights) {
  const Tensor<T>& X = logits.value();
  check_targets(X, targets, weights.size(), "softmax_cross_entropy");
  const std::size_t K = static_cast<std::size_t>(X.dim(1));
  auto probs = std::make_shared<std::vector<T>>(X.size());
  T loss = T(0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const T* x = X.data.data() + i * K;
    T* p = probs->data() + i * K;
    const T mx = *std::max_element(x, x + K);
    T s = T(0);
    for (std::size_t j = 0; j < K; ++j) {
      p[j] = std::exp(x[j] - mx);
      s += p[j];
    }
    for (std::size_t j = 0; j < K; ++j) p[j] /= s;
    if (weights[i] != T(0)) loss += weights[i] * (mx + std::log(s) - x[targets[i]]);
  }
  const int ix = logits.id;
  return logits.tape->record(Tensor<T>({1}, {loss}), any_grad({logits}), [=](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (weights[i] == T(0)) continue;
      const T w = g * weights[i];
      const T* p = probs->data() + i * K;
      T* gi = gx.data() + i * K;
      for (std::size_t j = 0; j < K; ++j) gi[j] += w * p[j];
      gi[targets[i]] -= w;
    }
  });
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int stride, int padding) {
  Tape<T>& tape = same_tape(x, w, "conv2d");
  const Tensor<T>& X = x.value();
  const Tensor<T>& Wt = w.value();
  const ConvGeom g = conv_geometry(X.shape, Wt.shape, stride, padding);
  if (bias.valid() && (bias.tape != &tape || bias.shape() != Shape{g.Co})) {
    mismatch("conv2d bias", Wt.shape, bias.shape());
  }
  const int CK = g.C * g.kh * g.kw;
  const int P = g.Ho * g.Wo;
  const std::size_t in_sz = static_cast<std::size_t>(g.C) * g.H * g.W;
  const std::size_t out_sz = static_cast<std::size_t>(g.Co) * P;
  Tensor<T> out({g.B, g.Co, g.Ho, g.Wo});
  const T* bvals = bias.valid() ? bias.value().data.data() : nullptr;
  parallel_for(static_cast<std::size_t>(g.B), [&](std::size_t b0, std::size_t b1) {
    std::vector<T> cols(static_cast<std::size_t>(CK) * P);
    for (std::size_t b = b0; b < b1; ++b) {
      im2col(X.data.data() + b * in_sz, g.C, g.H, g.W, g.kh, g.kw, stride, padding, g.Ho, g.Wo, cols.data());
      T* o = out.data.data() + b * out_sz;
      kernels::gemm_nn(g.Co, P, CK, Wt.data.data(), cols.data(), o, false);
      if (bvals) {
        for (int c = 0; c < g.Co; ++c) {
          for (int p = 0; p < P; ++p) o[static_cast<std::size_t>(c) * P + p] += bvals[c];
        }
      }
    }
  });
  const int ixd = x.id, iw = w.id, ib = bias.valid() ? bias.id : -1;
  const bool grad = any_grad({x, w}) || (bias.valid() && tape.requires_grad(bias.id));
  return tape.record(std::move(out), grad, [=](Tape<T>& t, int self) {
    const T* gout = t.grad(self).data();
    const T* xv = t.value(ixd).data.data();
    const T* wv = t.value(iw).data.data();
    const bool need_x = t.requires_grad(ixd);
    const bool need_w = t.requires_grad(iw);
    const bool need_b = ib >= 0 && t.requires_grad(ib);
    T* gx = need_x ? t.grad_buffer(ixd).data() : nullptr;
    // per-image weight/bias gradients, reduced below in image order so the
    // result does not depend on how images were split across threads
    std::vector<T> gw_img(need_w ? static_cast<std::size_t>(g.B) * g.Co * CK : 0);
    std::vector<T> gb_img(need_b ? static_cast<std::size_t>(g.B) * g.Co : 0);
    parallel_for(static_cast<std::size_t>(g.B), [&](std::size_t b0, std::size_t b1) {
      std::vector<T> cols(static_cast<std::size_t>(CK) * P);
      for (std::size_t b = b0; b < b1; ++b) {
        const T* go = gout + b * out_sz;
        if (need_w) {
          im2col(xv + b * in_sz, g.C, g.H, g.W, g.kh, g.kw, stride, padding, g.Ho, g.Wo, cols.data());
          kernels::gemm_nt(g.Co, CK, P, go, cols.data(), gw_img.data() + b * g.Co * CK, false);
        }
        if (need_b) {
          for (int c = 0; c < g.Co; ++c) {
            T s = T(0);
            for (int p = 0; p < P; ++p) s += go[static_cast<std::size_t>(c) * P + p];
            gb_img[b * g.Co + c] = s;
          }
        }
        if (need_x) {
          kernels::gemm_tn(CK, P, g.Co, wv, go, cols.data(), false);
          col2im_add(cols.data(), g.C, g.H, g.W, g.kh, g.kw, stride, padding, g.Ho, g.Wo, gx + b * in_sz);
        }
      }
    });
    if (need_w) {
      auto& gw = t.grad_buffer(iw);
      for (int b = 0; b < g.B; ++b) {
        const T* src = gw_img.data() + static_cast<std::size_t>(b) * g.Co * CK;
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += src[i];
      }
    }
    if (need_b) {
      auto& gbias = t.grad_buffer(ib);
      for (int b = 0; b < g.B; ++b) {
        for (int c = 0; c < g.Co; ++c) gbias[c] += gb_img[static_cast<std::size_t>(b) * g.Co + c];
      }
    }
  });
}

template <class T>
Tensor<T> conv2d_reference(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                           int padding) {
  const ConvGeom g = conv_geometry(x.shape, w.shape, stride, padding);
  Tensor<T> out({g.B, g.Co, g.Ho, g.Wo});
  for (int b = 0; b < g.B; ++b) {
    for (int co = 0; co < g.Co; ++co) {
      for (int oy = 0; oy < g.Ho; ++oy) {
        for (int ox = 0; ox < g.Wo; ++ox) {
          T s = bias ? bias->data[static_cast<std::size_t>(co)] : T(0);
          for (int c = 0; c < g.C; ++c) {
            for (int u = 0; u < g.kh; ++u) {
              for (int v = 0; v < g.kw; ++v) {
                const int iy = oy * stride - padding + u;
                const int ix = ox * stride - padding + v;
                if (iy < 0 || iy >= g.H || ix < 0 || ix >= g.W) continue;
                s += w.data[((static_cast<std::size_t>(co) * g.C + c) * g.kh + u) * g.kw + v] *
                     x.data[((static_cast<std::size_t>(b) * g.C + c) * g.H + iy) * g.W + ix];
              }
            }
          }
          out.data[((static_cast<std::size_t>(b) * g.Co + co) * g.Ho + oy) * g.Wo + ox] = s;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(const GradFn& f, std::vector<Tensor<double>> inputs, double h,
                           std::size_t max_coords_per_input, double floor) {
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.param(in, true));
    Var<double> loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad_tensor(v).data);
  }
  auto evaluate = [&]() {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.param(in, false));
    return f(tape, vars).value().data.at(0);
  };
  GradCheckResult res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t n = inputs[i].size();
    const std::size_t count = (max_coords_per_input == 0 || n <= max_coords_per_input) ? n : max_coords_per_input;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t j = count == n ? k : k * n / count;
      double& x = inputs[i].data[j];
      const double orig = x;
      x = orig + h;
      const double fp = evaluate();
      x = orig - h;
      const double fm = evaluate();
      x = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][j];
      const double err = std::abs(a - numeric) / std::max(floor, std::abs(a) + std::abs(numeric));
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.coordinates;
    }
  }
  return res;
}

template <class T>
void sgd_step(Tensor<T>& param, Tensor<T>& velocity, const std::vector<T>& grad, const SgdConfig& cfg) {
  if (velocity.size() != param.size()) velocity = Tensor<T>(param.shape);
  if (!grad.empty() && grad.size() != param.size()) {
    throw ShapeError("sgd_step: gradient of size " + std::to_string(grad.size()) + " for parameter " +
                     shape_str(param.shape));
  }
  const T mu = static_cast<T>(cfg.momentum);
  const T wd = static_cast<T>(cfg.weight_decay);
  const T lr = static_cast<T>(cfg.lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad.empty() ? T(0) : grad[i];
    velocity.data[i] = mu * velocity.data[i] + g + wd * param.data[i];
    param.data[i] -= lr * velocity.data[i];
  }
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[8] = {'E', 'Q', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <class V>
void put(std::ostream& o, V v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& in, const std::string& path) {
  V v;
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw std::runtime_error(path + ": truncated checkpoint");
  return v;
}

}  // namespace

template <class T>
void save_tensors(const std::string& path, const std::map<std::string, Tensor<T>>& tensors) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + path);
  o.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(o, kVersion);
  put<std::uint32_t>(o, sizeof(T));
  put<std::uint64_t>(o, tensors.size());
  for (const auto& [name, t] : tensors) {  // std::map iterates in sorted order
    put<std::uint32_t>(o, static_cast<std::uint32_t>(name.size()));
    o.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(o, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put<std::int32_t>(o, d);
    o.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(T)));
  }
  if (!o) throw std::runtime_error("write failed: " + path);
}

template <class T>
std::map<std::string, Tensor<T>> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error(path + ": not a checkpoint");
  if (get<std::uint32_t>(in, path) != kVersion) throw std::runtime_error(path + ": unsupported checkpoint version");
  if (get<std::uint32_t>(in, path) != sizeof(T)) throw std::runtime_error(path + ": precision mismatch");
  const auto count = get<std::uint64_t>(in, path);
  std::map<std::string, Tensor<T>> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = get<std::uint32_t>(in, path);
    if (len > 4096) throw std::runtime_error(path + ": corrupt tensor name");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 8) throw std::runtime_error(path + ": corrupt tensor rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get<std::int32_t>(in, path));
    Tensor<T> t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!in) throw std::runtime_error(path + ": truncated checkpoint");
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// instantiations

#define EQDESC_INSTANTIATE(T)                                                                     \
  template class Tape<T>;                                                                         \
  template Var<T> matmul(Var<T>, Var<T>);                                                         \
  template Var<T> bmm(Var<T>, Var<T>);                                                            \
  template Var<T> add(Var<T>, Var<T>);                                                            \
  template Var<T> sub(Var<T>, Var<T>);                                                            \
  template Var<T> mul(Var<T>, Var<T>);                                                            \
  template Var<T> scale(Var<T>, T);                                                               \
  template Var<T> sigmoid(Var<T>);                                                                \
  template Var<T> tanh(Var<T>);                                                                   \
  template Var<T> softmax(Var<T>);                                                                \
  template Var<T> mean(Var<T>, int);                                                              \
  template Var<T> sum(Var<T>);                                                                    \
  template Var<T> concat(const std::vector<Var<T>>&);                                             \
  template Var<T> slice_last(Var<T>, int, int);                                                   \
  template Var<T> reshape(Var<T>, Shape);                                                         \
  template Var<T> transpose_last2(Var<T>);                                                        \
  template Var<T> embedding(Var<T>, const std::vector<int>&);                                     \
  template Var<T> dropout(Var<T>, double, bool, DropoutKey);                                      \
  template Var<T> cross_entropy(Var<T>, const std::vector<int>&, const std::vector<T>&);          \
  template Var<T> softmax_cross_entropy(Var<T>, const std::vector<int>&, const std::vector<T>&);  \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                                       \
  template Tensor<T> conv2d_reference(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int, int); \
  template void sgd_step(Tensor<T>&, Tensor<T>&, const std::vector<T>&, const SgdConfig&);        \
  template void save_tensors(const std::string&, const std::map<std::string, Tensor<T>>&);        \
  template std::map<std::string, Tensor<T>> load_tensors(const std::string&);

EQDESC_INSTANTIATE(float)
EQDESC_INSTANTIATE(double)

#undef EQDESC_INSTANTIATE

}  // namespace eqd
