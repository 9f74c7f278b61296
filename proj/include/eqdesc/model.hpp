#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "eqdesc/autodiff.hpp"
#include "eqdesc/layout.hpp"

namespace eqd {

constexpr int kPadId = 0;
constexpr int kStartId = 1;
constexpr int kEndId = 2;
constexpr int kUnkId = 3;

enum class CellKind { Lstm, Gru, Rnn };

std::string cell_name(CellKind c);
// Throws std::invalid_argument for names other than lstm, gru, rnn.
CellKind parse_cell(const std::string& name);

struct ModelConfig {
  int image_height = 64;
  int image_width = 256;
  // Output channels of every conv layer but the last; the last one outputs
  // feature_dim. Each layer is 3x3, stride 2, padding 1, tanh.
  std::vector<int> enc_channels{16, 32, 64};
  int feature_dim = 64;   // D
  int embed_dim = 64;     // m
  int hidden_dim = 128;   // n
  int attn_dim = 64;      // n'
  int vocab_size = 4;     // K
  int max_len = 40;       // T_max, tokens excluding start/end
  CellKind cell = CellKind::Lstm;
  bool use_attention = true;
  bool freeze_encoder = false;
  double dropout = 0.5;
  // Appends two fixed channels holding the pixel's column and row, scaled
  // to [-1, 1], to the ink channel so annotations carry their position.
  bool coord_channels = true;

  int input_channels() const { return coord_channels ? 3 : 1; }
  int conv_layers() const { return static_cast<int>(enc_channels.size()) + 1; }
  int grid_height() const;
  int grid_width() const;
  int grid_size() const { return grid_height() * grid_width(); }  // L

  // Throws std::invalid_argument naming the first bad field.
  void validate() const;

  // key=value lines, one per field.
  std::string to_text() const;
  // Unknown keys and malformed values throw std::invalid_argument.
  static ModelConfig from_text(const std::string& text);
  // Applies one key=value override; returns false for unknown keys.
  bool set(const std::string& key, const std::string& value);
};

template <class T>
using ParamMap = std::map<std::string, Tensor<T>>;

// Parameter names and shapes for a config, in sorted order.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg);
bool is_encoder_parameter(const std::string& name);

template <class T>
class MedModel {
 public:
  // Weights uniform in +-sqrt(3/fan_in), biases zero; a pure function of
  // (config, seed).
  MedModel(ModelConfig cfg, std::uint64_t seed);
  // Wraps existing parameters; throws std::invalid_argument when names or
  // shapes do not match the config.
  MedModel(ModelConfig cfg, ParamMap<T> params);

  const ModelConfig& config() const { return cfg_; }
  ParamMap<T>& params() { return params_; }
  const ParamMap<T>& params() const { return params_; }
  const Tensor<T>& param(const std::string& name) const { return params_.at(name); }

 private:
  ModelConfig cfg_;
  ParamMap<T> params_;
};

template <class T>
struct DecoderState {
  Var<T> h;  // [B, n]
  Var<T> c;  // [B, n], LSTM only
};

template <class T>
struct Annotations {
  Var<T> A;   // [Bi, L, D]
  Var<T> UA;  // [Bi, L, n'], A U_a precomputed once per image
};

template <class T>
struct Attention {
  Var<T> alpha;  // [B, L]
  Var<T> z;      // [B, D]
};

// The model's parameters bound to one tape, with the pieces of the network as
// tape operations. With B decoder rows, annotations either have Bi == B (one
// image per row) or Bi == 1 (all rows share one image, as in beam search).
template <class T>
class ModelGraph {
 public:
  ModelGraph(const MedModel<T>& model, Tape<T>& tape, bool need_grad);
  // Uses caller-provided variables as the parameters (gradient checks).
  ModelGraph(const ModelConfig& cfg, Tape<T>& tape, std::map<std::string, Var<T>> vars);

  Tape<T>& tape() { return tape_; }
  Var<T> param(const std::string& name) const { return vars_.at(name); }

  // Images must match the configured size (ShapeError otherwise). The
  // network sees 1 - pixel so the blank background is zero.
  Var<T> image_batch(const std::vector<const EqImage*>& images);
  // x: [B, 1, H, W] -> A: [B, L, D]
  Var<T> encode(Var<T> x, bool train, DropoutKey key);
  Annotations<T> annotate(Var<T> A);
  DecoderState<T> init_states(Var<T> A);
  Attention<T> attend(Var<T> h_prev, const Annotations<T>& ann);
  Var<T> embed(const std::vector<int>& tokens);
  DecoderState<T> cell_step(Var<T> emb, const DecoderState<T>& s, Var<T> z);
  // Deep output: (E y + h W_h + z W_z) W_o -> [B, K] logits.
  Var<T> word_logits(Var<T> emb, Var<T> h, Var<T> z);

  // Masked teacher-forced cross-entropy averaged over non-pad target tokens.
  // Sequences hold start ... end; shorter ones are padded with kPadId.
  Var<T> sequence_loss(const Annotations<T>& ann, const std::vector<std::vector<int>>& sequences);

 private:
  const ModelConfig& cfg_;
  Tape<T>& tape_;
  std::map<std::string, Var<T>> vars_;
};

struct Example {
  const EqImage* image = nullptr;
  std::vector<int> tokens;  // start ... end
};

template <class T>
struct LossAndGrads {
  double loss = 0.0;
  ParamMap<T> grads;  // every parameter; zeros where no gradient flowed
};

// Forward and backward over one batch. Dropout masks are keyed by `key`.
template <class T>
LossAndGrads<T> compute_gradients(const MedModel<T>& model, const std::vector<Example>& batch, bool train,
                                  DropoutKey key);

// Loss only (no dropout), for monitoring.
template <class T>
double evaluate_loss(const MedModel<T>& model, const std::vector<Example>& batch);

struct TrainConfig {
  double lr = 1e-3;
  double momentum = 0.5;
  double weight_decay = 1e-4;
  int batch_size = 50;
  // Gradients are rescaled to this global L2 norm when larger; 0 disables.
  double clip_norm = 0.0;
  std::uint64_t seed = 1;
};

// SGD with momentum over a model's parameters. Frozen encoder parameters are
// never updated.
class Trainer {
 public:
  Trainer(MedModel<float>& model, TrainConfig cfg);

  // One update; returns the batch loss before the update.
  double step(const std::vector<Example>& batch);
  // Shuffles the examples with a seed derived from (seed, epoch), runs all
  // batches, returns the mean batch loss.
  double run_epoch(const std::vector<Example>& examples, int epoch);

  ParamMap<float>& velocities() { return velocity_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

 private:
  MedModel<float>& model_;
  TrainConfig cfg_;
  ParamMap<float> velocity_;
  std::uint64_t steps_ = 0;
};

// ---- decoding ----

struct DecodeResult {
  std::vector<int> tokens;  // without start and end
  double log_prob = 0.0;    // includes the end token when completed
  bool completed = false;
};

// Log-probabilities of the next token for a set of prefixes.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual int vocab_size() const = 0;
  // Row r continues row parents[r] of the previous call (parents is empty on
  // the first call) and feeds token last[r]. Returns [rows x K] log-probs.
  virtual std::vector<double> step(const std::vector<int>& parents, const std::vector<int>& last) = 0;
};

// Keeps at most `beam` live prefixes; a chosen candidate ending in end_id
// moves to the completed set and shrinks the beam. Ties: higher log-prob,
// then lexicographically smaller token sequence.
DecodeResult beam_search(StepScorer& scorer, int beam, int max_len, int start_id, int end_id);
// Argmax at every step, lowest id on ties.
DecodeResult greedy_search(StepScorer& scorer, int max_len, int start_id, int end_id);

// Stable log-softmax of one row of logits, in double.
void log_softmax_row(const float* logits, int k, double* out);

// Scores prefixes for a single image.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const MedModel<float>& model, const EqImage& image);
  int vocab_size() const override;
  std::vector<double> step(const std::vector<int>& parents, const std::vector<int>& last) override;

 private:
  const MedModel<float>& model_;
  Tensor<float> A_, UA_;
  Tensor<float> h_, c_;
};

DecodeResult beam_decode(const MedModel<float>& model, const EqImage& image, int beam, int max_len);
// Batched over images; row arithmetic does not depend on the batch, so each
// result equals decoding that image alone.
std::vector<DecodeResult> greedy_decode(const MedModel<float>& model, const std::vector<const EqImage*>& images,
                                        int max_len);

// Attention weights and context vectors of a greedy decode, for inspection.
struct DecodeTrace {
  std::vector<std::vector<float>> alpha;  // per step, length L
  std::vector<std::vector<float>> z;      // per step, length D
  std::vector<std::vector<double>> probs; // per step, length K
  Tensor<float> A;                        // [L, D]
};
DecodeTrace trace_greedy(const MedModel<float>& model, const EqImage& image, int max_len);

// ---- checks ----

// 16x64 images, D=8, n=16, m=8, n'=8, K=12, L=4.
ModelConfig tiny_check_config(CellKind cell);
// Central-difference check of the full training loss (dropout on, fixed
// masks) over every parameter of the tiny config, in 64-bit. Weights are
// drawn uniformly from +-0.5: with the small default init many gradients are
// tiny. The error floor is 1e-6: central differences of a loss near 2 carry
// roundoff of a few 1e-11 at h = 1e-5, so gradients around 1e-8 cannot be
// resolved to 1e-4 relative (absolute tolerance here is 1e-10).
GradCheckResult full_model_grad_check(CellKind cell, std::uint64_t seed);

// ---- persistence ----

// Writes params plus "momentum/<name>" entries when velocities are given.
void save_checkpoint(const std::string& path, const MedModel<float>& model, const ParamMap<float>* velocities);
// Loads a checkpoint for a config; fills velocities when requested and present.
MedModel<float> load_checkpoint(const std::string& path, const ModelConfig& cfg, ParamMap<float>* velocities);

}  // namespace eqd
