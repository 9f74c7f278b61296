#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "eqdesc/tensor.hpp"

namespace eqd {

template <class T>
class Tape;

// Handle to a node of a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so recording
// order is a topological order; backward walks it once in reverse.
// Not thread-safe; use one tape per thread.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  // Refers to external storage without copying; it must outlive the tape and
  // stay unchanged while the tape is in use.
  Var<T> param(const Tensor<T>& external, bool requires_grad = true);

  Var<T> record(Tensor<T> value, bool requires_grad, Backward backward);

  const Tensor<T>& value(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Gradient buffer of a node, zero-filled on first use.
  std::vector<T>& grad_buffer(int id);
  // Empty when no gradient reached the node.
  const std::vector<T>& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  Tensor<T> grad_tensor(Var<T> v) const;

  // Seeds d(loss)/d(loss) = 1; loss must hold exactly one value.
  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return visits_; }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    bool requires_grad = false;
    std::vector<T> grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

// Keys a dropout mask; masks are a pure function of (seed, stream, element).
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

std::uint64_t mix_key(std::uint64_t a, std::uint64_t b);

// ---- primitives ----
// Shape mismatches throw ShapeError naming both shapes.

// a: [..., K], b: [K, N] -> [..., N]
template <class T> Var<T> matmul(Var<T> a, Var<T> b);
// a: [B, M, K], b: [B, K, N] -> [B, M, N]
template <class T> Var<T> bmm(Var<T> a, Var<T> b);
// Same-rank broadcasting: each dim equal, or 1 in one operand.
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T s);
template <class T> Var<T> sigmoid(Var<T> a);
template <class T> Var<T> tanh(Var<T> a);
// over the last axis
template <class T> Var<T> softmax(Var<T> a);
// removes the axis
template <class T> Var<T> mean(Var<T> a, int axis);
template <class T> Var<T> sum(Var<T> a);
// along the last axis
template <class T> Var<T> concat(const std::vector<Var<T>>& parts);
// columns [begin, end) of the last axis
template <class T> Var<T> slice_last(Var<T> a, int begin, int end);
template <class T> Var<T> reshape(Var<T> a, Shape shape);
// swaps the last two axes: [..., X, Y] -> [..., Y, X]
template <class T> Var<T> transpose_last2(Var<T> a);
// table: [K, m] -> [ids.size(), m]
template <class T> Var<T> embedding(Var<T> table, const std::vector<int>& ids);
// Inverted dropout; identity when !train or rate == 0.
template <class T> Var<T> dropout(Var<T> a, double rate, bool train, DropoutKey key);
// probs: [N, K] -> [1] holding sum_i w_i * -log probs[i, target_i]
template <class T>
Var<T> cross_entropy(Var<T> probs, const std::vector<int>& targets, const std::vector<T>& weights);
// Same loss from logits via a stable log-softmax.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& targets,
                             const std::vector<T>& weights);
// x: [B, C, H, W], w: [Co, C, kh, kw], bias: [Co] or invalid -> [B, Co, Ho, Wo]
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int stride, int padding = 0);

// Direct seven-loop convolution used as the reference for the fast path.
template <class T>
Tensor<T> conv2d_reference(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                           int padding);

// ---- checking and optimization ----

using GradFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Central differences with step h over every coordinate of every input
// (or an evenly spaced subset when max_coords_per_input > 0). Error per
// coordinate: |analytic - numeric| / max(floor, |analytic| + |numeric|).
GradCheckResult grad_check(const GradFn& f, std::vector<Tensor<double>> inputs, double h = 1e-5,
                           std::size_t max_coords_per_input = 0, double floor = 1e-8);

struct SgdConfig {
  double lr = 1e-3;
  double momentum = 0.5;
  double weight_decay = 1e-4;
};

// v <- momentum * v + g + weight_decay * p;  p <- p - lr * v
template <class T>
void sgd_step(Tensor<T>& param, Tensor<T>& velocity, const std::vector<T>& grad, const SgdConfig& cfg);

// ---- checkpoints ----
// Header: magic "EQDCKPT1", u32 version, u32 bytes per scalar, u64 count;
// then (name, shape, data) in sorted-name order. Little-endian.

template <class T>
void save_tensors(const std::string& path, const std::map<std::string, Tensor<T>>& tensors);
template <class T>
std::map<std::string, Tensor<T>> load_tensors(const std::string& path);

}  // namespace eqd
