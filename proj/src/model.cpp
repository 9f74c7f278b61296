#include "eqdesc/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace eqd {

std::string cell_name(CellKind c) {
  switch (c) {
    case CellKind::Lstm: return "lstm";
    case CellKind::Gru: return "gru";
    case CellKind::Rnn: return "rnn";
  }
  return "lstm";
}

CellKind parse_cell(const std::string& name) {
  if (name == "lstm") return CellKind::Lstm;
  if (name == "gru") return CellKind::Gru;
  if (name == "rnn") return CellKind::Rnn;
  throw std::invalid_argument("unknown cell kind '" + name + "' (expected lstm, gru or rnn)");
}

// ---------------------------------------------------------------------------
// config

namespace {

int conv_out(int in) { return (in - 1) / 2 + 1; }  // 3x3, stride 2, padding 1

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument(key + ": not an integer: '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument(key + ": not a number: '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

}  // namespace

int ModelConfig::grid_height() const {
  int h = image_height;
  for (int i = 0; i < conv_layers(); ++i) h = conv_out(h);
  return h;
}

int ModelConfig::grid_width() const {
  int w = image_width;
  for (int i = 0; i < conv_layers(); ++i) w = conv_out(w);
  return w;
}

void ModelConfig::validate() const {
  auto positive = [](const char* name, int v) {
    if (v <= 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
  };
  positive("image_height", image_height);
  positive("image_width", image_width);
  for (int c : enc_channels) positive("enc_channels", c);
  positive("feature_dim", feature_dim);
  positive("embed_dim", embed_dim);
  positive("hidden_dim", hidden_dim);
  positive("attn_dim", attn_dim);
  positive("max_len", max_len);
  if (vocab_size < 4) throw std::invalid_argument("model config: vocab_size must be at least 4");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must be in [0, 1)");
}

std::string ModelConfig::to_text() const {
  std::ostringstream o;
  o << "image_height=" << image_height << "\n";
  o << "image_width=" << image_width << "\n";
  o << "enc_channels=";
  for (std::size_t i = 0; i < enc_channels.size(); ++i) o << (i ? "," : "") << enc_channels[i];
  o << "\n";
  o << "feature_dim=" << feature_dim << "\n";
  o << "embed_dim=" << embed_dim << "\n";
  o << "hidden_dim=" << hidden_dim << "\n";
  o << "attn_dim=" << attn_dim << "\n";
  o << "vocab_size=" << vocab_size << "\n";
  o << "max_len=" << max_len << "\n";
  o << "cell=" << cell_name(cell) << "\n";
  o << "use_attention=" << (use_attention ? "true" : "false") << "\n";
  o << "freeze_encoder=" << (freeze_encoder ? "true" : "false") << "\n";
  o << "dropout=" << format_double(dropout) << "\n";
  o << "coord_channels=" << (coord_channels ? "true" : "false") << "\n";
  return o.str();
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "image_height") image_height = parse_int(key, value);
  else if (key == "image_width") image_width = parse_int(key, value);
  else if (key == "enc_channels") {
    enc_channels.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) enc_channels.push_back(parse_int(key, item));
    }
  } else if (key == "feature_dim") feature_dim = parse_int(key, value);
  else if (key == "embed_dim") embed_dim = parse_int(key, value);
  else if (key == "hidden_dim") hidden_dim = parse_int(key, value);
  else if (key == "attn_dim") attn_dim = parse_int(key, value);
  else if (key == "vocab_size") vocab_size = parse_int(key, value);
  else if (key == "max_len") max_len = parse_int(key, value);
  else if (key == "cell") cell = parse_cell(value);
  else if (key == "use_attention") use_attention = parse_bool(key, value);
  else if (key == "freeze_encoder") freeze_encoder = parse_bool(key, value);
  else if (key == "dropout") dropout = parse_double(key, value);
  else if (key == "coord_channels") coord_channels = parse_bool(key, value);
  else return false;
  return true;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("model config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (!cfg.set(key, trim(line.substr(eq + 1)))) throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// parameters

std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> s;
  const int D = cfg.feature_dim, m = cfg.embed_dim, n = cfg.hidden_dim, na = cfg.attn_dim, K = cfg.vocab_size;
  int in = cfg.input_channels();
  for (int i = 0; i < cfg.conv_layers(); ++i) {
    const int out = i + 1 < cfg.conv_layers() ? cfg.enc_channels[static_cast<std::size_t>(i)] : D;
    s["enc/conv" + std::to_string(i) + "/w"] = {out, in, 3, 3};
    s["enc/conv" + std::to_string(i) + "/b"] = {out};
    in = out;
  }
  s["dec/embed"] = {K, m};
  if (cfg.use_attention) {
    s["att/W_a"] = {n, na};
    s["att/U_a"] = {D, na};
    s["att/v_a"] = {na, 1};
  }
  s["init/h_w"] = {D, n};
  s["init/h_b"] = {1, n};
  switch (cfg.cell) {
    case CellKind::Lstm:
      s["init/c_w"] = {D, n};
      s["init/c_b"] = {1, n};
      s["cell/W"] = {m + n + D, 4 * n};
      s["cell/b"] = {1, 4 * n};
      break;
    case CellKind::Gru:
      s["cell/W_g"] = {m + n + D, 2 * n};
      s["cell/b_g"] = {1, 2 * n};
      s["cell/W_c"] = {m + D, n};
      s["cell/U_c"] = {n, n};
      s["cell/b_c"] = {1, n};
      break;
    case CellKind::Rnn:
      s["cell/W"] = {m + n + D, n};
      s["cell/b"] = {1, n};
      break;
  }
  s["out/W_h"] = {n, m};
  s["out/W_z"] = {D, m};
  s["out/W_o"] = {m, K};
  return s;
}

bool is_encoder_parameter(const std::string& name) { return name.rfind("enc/", 0) == 0; }

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_bias(const std::string& name) {
  const std::string seg = name.substr(name.rfind('/') + 1);
  return seg == "b" || seg.starts_with("b_") || seg.ends_with("_b");
}

}  // namespace

template <class T>
MedModel<T>::MedModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  for (const auto& [name, shape] : parameter_shapes(cfg_)) {
    Tensor<T> t(shape);
    if (!is_bias(name)) {
      int fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      if (name == "dec/embed") fan_in = shape[1];
      const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
      const std::uint64_t base = mix_key(seed, fnv1a(name));
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double u = static_cast<double>(mix_key(base, i) >> 11) * 0x1.0p-53;
        t.data[i] = static_cast<T>((2.0 * u - 1.0) * bound);
      }
    }
    params_.emplace(name, std::move(t));
  }
}

template <class T>
MedModel<T>::MedModel(ModelConfig cfg, ParamMap<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  const auto shapes = parameter_shapes(cfg_);
  for (const auto& [name, shape] : shapes) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("missing parameter " + name);
    if (it->second.shape != shape) {
      throw std::invalid_argument("parameter " + name + " has shape " + shape_str(it->second.shape) + ", config needs " +
                                  shape_str(shape));
    }
  }
  for (const auto& [name, t] : params_) {
    if (!shapes.count(name)) throw std::invalid_argument("unexpected parameter " + name);
  }
}

// ---------------------------------------------------------------------------
// graph

template <class T>
ModelGraph<T>::ModelGraph(const MedModel<T>& model, Tape<T>& tape, bool need_grad)
    : cfg_(model.config()), tape_(tape) {
  for (const auto& [name, t] : model.params()) {
    const bool grad = need_grad && !(cfg_.freeze_encoder && is_encoder_parameter(name));
    vars_.emplace(name, tape.param(t, grad));
  }
}

template <class T>
ModelGraph<T>::ModelGraph(const ModelConfig& cfg, Tape<T>& tape, std::map<std::string, Var<T>> vars)
    : cfg_(cfg), tape_(tape), vars_(std::move(vars)) {
  for (const auto& [name, shape] : parameter_shapes(cfg_)) {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::invalid_argument("missing parameter " + name);
    if (it->second.shape() != shape) throw ShapeError("parameter " + name + " has shape " + shape_str(it->second.shape()));
  }
}

template <class T>
Var<T> ModelGraph<T>::image_batch(const std::vector<const EqImage*>& images) {
  const int B = static_cast<int>(images.size());
  const int H = cfg_.image_height, W = cfg_.image_width;
  const int C = cfg_.input_channels();
  Tensor<T> x({B, C, H, W});
  for (int b = 0; b < B; ++b) {
    const EqImage& img = *images[static_cast<std::size_t>(b)];
    if (img.height != H || img.width != W || img.pixels.size() != static_cast<std::size_t>(H) * W) {
      throw ShapeError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) + ", model expects " +
                       std::to_string(H) + "x" + std::to_string(W));
    }
    T* dst = x.data.data() + static_cast<std::size_t>(b) * C * H * W;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) dst[i] = T(1) - static_cast<T>(img.pixels[i]);
    if (cfg_.coord_channels) {
      T* cx = dst + static_cast<std::size_t>(H) * W;
      T* cy = cx + static_cast<std::size_t>(H) * W;
      for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
          cx[r * W + c] = static_cast<T>(W > 1 ? 2.0 * c / (W - 1) - 1.0 : 0.0);
          cy[r * W + c] = static_cast<T>(H > 1 ? 2.0 * r / (H - 1) - 1.0 : 0.0);
        }
      }
    }
  }
  return tape_.constant(std::move(x));
}

template <class T>
Var<T> ModelGraph<T>::encode(Var<T> x, bool train, DropoutKey key) {
  for (int i = 0; i < cfg_.conv_layers(); ++i) {
    const std::string p = "enc/conv" + std::to_string(i);
    x = tanh(conv2d(x, vars_.at(p + "/w"), vars_.at(p + "/b"), 2, 1));
    x = dropout(x, cfg_.dropout, train, DropoutKey{key.seed, mix_key(key.stream, static_cast<std::uint64_t>(i))});
  }
  const int B = x.shape()[0];
  const int L = cfg_.grid_size();
  if (x.shape()[2] * x.shape()[3] != L) throw ShapeError("encoder grid " + shape_str(x.shape()) + " does not match config");
  return transpose_last2(reshape(x, {B, cfg_.feature_dim, L}));
}

template <class T>
Annotations<T> ModelGraph<T>::annotate(Var<T> A) {
  Annotations<T> ann{A, Var<T>{}};
  if (cfg_.use_attention) ann.UA = matmul(A, vars_.at("att/U_a"));
  return ann;
}

template <class T>
DecoderState<T> ModelGraph<T>::init_states(Var<T> A) {
  Var<T> a_mean = mean(A, 1);
  DecoderState<T> s;
  s.h = tanh(add(matmul(a_mean, vars_.at("init/h_w")), vars_.at("init/h_b")));
  if (cfg_.cell == CellKind::Lstm) s.c = tanh(add(matmul(a_mean, vars_.at("init/c_w")), vars_.at("init/c_b")));
  return s;
}

template <class T>
Attention<T> ModelGraph<T>::attend(Var<T> h_prev, const Annotations<T>& ann) {
  const int B = h_prev.shape()[0];
  const int Bi = ann.A.shape()[0];
  const int L = ann.A.shape()[1];
  const int D = ann.A.shape()[2];
  if (Bi != B && Bi != 1) throw ShapeError("attend: " + std::to_string(B) + " rows over annotations " + shape_str(ann.A.shape()));
  Attention<T> out;
  if (cfg_.use_attention) {
    const int na = cfg_.attn_dim;
    Var<T> wh = reshape(matmul(h_prev, vars_.at("att/W_a")), {B, 1, na});
    Var<T> e = matmul(tanh(add(ann.UA, wh)), vars_.at("att/v_a"));  // [B, L, 1]
    out.alpha = softmax(reshape(e, {B, L}));
  } else {
    out.alpha = tape_.constant(Tensor<T>({B, L}, T(1) / static_cast<T>(L)));
  }
  if (Bi == B) {
    out.z = reshape(bmm(reshape(out.alpha, {B, 1, L}), ann.A), {B, D});
  } else {
    out.z = matmul(out.alpha, reshape(ann.A, {L, D}));
  }
  return out;
}

template <class T>
Var<T> ModelGraph<T>::embed(const std::vector<int>& tokens) {
  return embedding(vars_.at("dec/embed"), tokens);
}

template <class T>
DecoderState<T> ModelGraph<T>::cell_step(Var<T> emb, const DecoderState<T>& s, Var<T> z) {
  const int n = cfg_.hidden_dim;
  DecoderState<T> next;
  switch (cfg_.cell) {
    case CellKind::Lstm: {
      Var<T> g = add(matmul(concat<T>({emb, s.h, z}), vars_.at("cell/W")), vars_.at("cell/b"));
      Var<T> i = sigmoid(slice_last(g, 0, n));
      Var<T> f = sigmoid(slice_last(g, n, 2 * n));
      Var<T> o = sigmoid(slice_last(g, 2 * n, 3 * n));
      Var<T> u = tanh(slice_last(g, 3 * n, 4 * n));
      next.c = add(mul(f, s.c), mul(i, u));
      next.h = mul(o, tanh(next.c));
      break;
    }
    case CellKind::Gru: {
      Var<T> gates = sigmoid(add(matmul(concat<T>({emb, s.h, z}), vars_.at("cell/W_g")), vars_.at("cell/b_g")));
      Var<T> r = slice_last(gates, 0, n);
      Var<T> u = slice_last(gates, n, 2 * n);
      Var<T> cand = tanh(add(add(matmul(concat<T>({emb, z}), vars_.at("cell/W_c")), matmul(mul(r, s.h), vars_.at("cell/U_c"))),
                             vars_.at("cell/b_c")));
      next.h = add(s.h, mul(u, sub(cand, s.h)));
      break;
    }
    case CellKind::Rnn:
      next.h = tanh(add(matmul(concat<T>({emb, s.h, z}), vars_.at("cell/W")), vars_.at("cell/b")));
      break;
  }
  return next;
}

template <class T>
Var<T> ModelGraph<T>::word_logits(Var<T> emb, Var<T> h, Var<T> z) {
  Var<T> pre = add(add(emb, matmul(h, vars_.at("out/W_h"))), matmul(z, vars_.at("out/W_z")));
  return matmul(pre, vars_.at("out/W_o"));
}

template <class T>
Var<T> ModelGraph<T>::sequence_loss(const Annotations<T>& ann, const std::vector<std::vector<int>>& sequences) {
  const std::size_t B = sequences.size();
  if (B == 0) throw std::invalid_argument("sequence_loss: empty batch");
  if (static_cast<std::size_t>(ann.A.shape()[0]) != B) throw ShapeError("sequence_loss: batch and annotations differ");
  std::size_t max_len = 0, targets = 0;
  for (const auto& s : sequences) {
    if (s.size() < 2) throw std::invalid_argument("sequence_loss: sequences need start and end tokens");
    max_len = std::max(max_len, s.size());
    targets += s.size() - 1;
  }
  const T w = T(1) / static_cast<T>(targets);
  DecoderState<T> s = init_states(ann.A);
  Var<T> loss;
  std::vector<int> prev(B), tgt(B);
  std::vector<T> weights(B);
  for (std::size_t t = 0; t + 1 < max_len; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      const auto& seq = sequences[b];
      const bool live = t + 1 < seq.size();
      prev[b] = t < seq.size() ? seq[t] : kPadId;
      tgt[b] = live ? seq[t + 1] : kPadId;
      weights[b] = live ? w : T(0);
    }
    Attention<T> att = attend(s.h, ann);
    Var<T> emb = embed(prev);
    s = cell_step(emb, s, att.z);
    Var<T> l = softmax_cross_entropy(word_logits(emb, s.h, att.z), tgt, weights);
    loss = loss.valid() ? add(loss, l) : l;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// training

template <class T>
LossAndGrads<T> compute_gradients(const MedModel<T>& model, const std::vector<Example>& batch, bool train,
                                  DropoutKey key) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  Tape<T> tape;
  ModelGraph<T> g(model, tape, true);
  std::vector<const EqImage*> images;
  std::vector<std::vector<int>> seqs;
  for (const auto& ex : batch) {
    images.push_back(ex.image);
    seqs.push_back(ex.tokens);
  }
  Var<T> A = g.encode(g.image_batch(images), train, key);
  Var<T> loss = g.sequence_loss(g.annotate(A), seqs);
  tape.backward(loss);
  LossAndGrads<T> out;
  out.loss = static_cast<double>(loss.value().data[0]);
  for (const auto& [name, t] : model.params()) out.grads.emplace(name, tape.grad_tensor(g.param(name)));
  return out;
}

template <class T>
double evaluate_loss(const MedModel<T>& model, const std::vector<Example>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  Tape<T> tape;
  ModelGraph<T> g(model, tape, false);
  std::vector<const EqImage*> images;
  std::vector<std::vector<int>> seqs;
  for (const auto& ex : batch) {
    images.push_back(ex.image);
    seqs.push_back(ex.tokens);
  }
  Var<T> A = g.encode(g.image_batch(images), false, {});
  return static_cast<double>(g.sequence_loss(g.annotate(A), seqs).value().data[0]);
}

Trainer::Trainer(MedModel<float>& model, TrainConfig cfg) : model_(model), cfg_(cfg) {
  if (cfg_.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  for (const auto& [name, t] : model_.params()) velocity_.emplace(name, Tensor<float>(t.shape));
}

double Trainer::step(const std::vector<Example>& batch) {
  const DropoutKey key{mix_key(cfg_.seed, 0x64726f70ULL), steps_};
  LossAndGrads<float> lg = compute_gradients(model_, batch, true, key);
  const bool frozen = model_.config().freeze_encoder;
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : lg.grads) {
      if (frozen && is_encoder_parameter(name)) continue;
      for (float v : g.data) sq += static_cast<double>(v) * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }
  const SgdConfig sgd{cfg_.lr, cfg_.momentum, cfg_.weight_decay};
  for (auto& [name, p] : model_.params()) {
    if (frozen && is_encoder_parameter(name)) continue;
    auto& g = lg.grads.at(name).data;
    if (scale != 1.0) {
      for (auto& v : g) v = static_cast<float>(v * scale);
    }
    sgd_step(p, velocity_[name], g, sgd);
  }
  ++steps_;
  return lg.loss;
}

double Trainer::run_epoch(const std::vector<Example>& examples, int epoch) {
  if (examples.empty()) throw std::invalid_argument("no training examples");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with a counter-based generator so the order is the same on
  // every platform.
  const std::uint64_t base = mix_key(cfg_.seed, 0x73687566ULL + static_cast<std::uint64_t>(epoch));
  for (std::size_t i = order.size(); i-- > 1;) {
    const std::size_t j = static_cast<std::size_t>(mix_key(base, i) % (i + 1));
    std::swap(order[i], order[j]);
  }
  double total = 0.0;
  int batches = 0;
  const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::vector<Example> batch;
    for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(examples[order[k]]);
    total += step(batch);
    ++batches;
  }
  return total / batches;
}

// ---------------------------------------------------------------------------
// decoding

void log_softmax_row(const float* logits, int k, double* out) {
  double mx = logits[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  double s = 0.0;
  for (int j = 0; j < k; ++j) s += std::exp(static_cast<double>(logits[j]) - mx);
  const double lse = mx + std::log(s);
  for (int j = 0; j < k; ++j) out[j] = static_cast<double>(logits[j]) - lse;
}

namespace {

struct Encoded {
  Tensor<float> A, UA;  // [B, L, D], [B, L, n'] (UA empty without attention)
  Tensor<float> h, c;   // [B, n]
};

Encoded encode_images(const MedModel<float>& model, const std::vector<const EqImage*>& images) {
  Tape<float> tape;
  ModelGraph<float> g(model, tape, false);
  Var<float> A = g.encode(g.image_batch(images), false, {});
  Annotations<float> ann = g.annotate(A);
  DecoderState<float> s = g.init_states(A);
  Encoded e;
  e.A = A.value();
  if (ann.UA.valid()) e.UA = ann.UA.value();
  e.h = s.h.value();
  if (s.c.valid()) e.c = s.c.value();
  return e;
}

struct StepOutput {
  std::vector<double> log_probs;  // [rows x K]
  Tensor<float> alpha, z;
};

// One decoder step for `last.size()` rows over annotations A (batch B or 1);
// h and c are replaced by the new state.
StepOutput decoder_step(const MedModel<float>& model, const Tensor<float>& A, const Tensor<float>& UA, Tensor<float>& h,
                        Tensor<float>& c, const std::vector<int>& last) {
  Tape<float> tape;
  ModelGraph<float> g(model, tape, false);
  Annotations<float> ann{tape.param(A, false), UA.size() ? tape.param(UA, false) : Var<float>{}};
  DecoderState<float> s{tape.param(h, false), c.size() ? tape.param(c, false) : Var<float>{}};
  Attention<float> att = g.attend(s.h, ann);
  Var<float> emb = g.embed(last);
  DecoderState<float> next = g.cell_step(emb, s, att.z);
  Var<float> logits = g.word_logits(emb, next.h, att.z);
  const int K = model.config().vocab_size;
  StepOutput out;
  out.log_probs.resize(last.size() * static_cast<std::size_t>(K));
  for (std::size_t r = 0; r < last.size(); ++r) {
    log_softmax_row(logits.value().data.data() + r * K, K, out.log_probs.data() + r * K);
  }
  out.alpha = att.alpha.value();
  out.z = att.z.value();
  Tensor<float> nh = next.h.value();
  Tensor<float> nc = next.c.valid() ? next.c.value() : Tensor<float>{};
  h = std::move(nh);
  c = std::move(nc);
  return out;
}

Tensor<float> gather_rows(const Tensor<float>& t, const std::vector<int>& rows) {
  if (t.size() == 0) return t;
  const std::size_t w = static_cast<std::size_t>(t.dim(-1));
  Tensor<float> out({static_cast<int>(rows.size()), static_cast<int>(w)});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(t.data.data() + static_cast<std::size_t>(rows[r]) * w, w, out.data.data() + r * w);
  }
  return out;
}

int argmax_lowest(const double* v, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (v[j] > v[best]) best = j;
  }
  return best;
}

}  // namespace

ModelScorer::ModelScorer(const MedModel<float>& model, const EqImage& image) : model_(model) {
  Encoded e = encode_images(model, {&image});
  A_ = std::move(e.A);
  UA_ = std::move(e.UA);
  h_ = std::move(e.h);
  c_ = std::move(e.c);
}

int ModelScorer::vocab_size() const { return model_.config().vocab_size; }

std::vector<double> ModelScorer::step(const std::vector<int>& parents, const std::vector<int>& last) {
  if (!parents.empty()) {
    h_ = gather_rows(h_, parents);
    c_ = gather_rows(c_, parents);
  } else if (last.size() != static_cast<std::size_t>(h_.dim(0))) {
    h_ = gather_rows(h_, std::vector<int>(last.size(), 0));
    c_ = gather_rows(c_, std::vector<int>(last.size(), 0));
  }
  return decoder_step(model_, A_, UA_, h_, c_, last).log_probs;
}

DecodeResult beam_search(StepScorer& scorer, int beam, int max_len, int start_id, int end_id) {
  if (beam < 1) throw std::invalid_argument("beam must be at least 1");
  struct Hyp {
    std::vector<int> tokens;
    double lp = 0.0;
  };
  const int K = scorer.vocab_size();
  std::vector<Hyp> live{Hyp{}};
  std::vector<Hyp> done;
  std::vector<int> parents, last{start_id};
  auto better = [](double la, const std::vector<int>& ta, double lb, const std::vector<int>& tb) {
    if (la != lb) return la > lb;
    return ta < tb;
  };
  for (int t = 0; t < max_len && !live.empty(); ++t) {
    const std::vector<double> lps = scorer.step(parents, last);
    const int width = beam - static_cast<int>(done.size());
    std::vector<std::size_t> cand(live.size() * static_cast<std::size_t>(K));
    std::iota(cand.begin(), cand.end(), 0);
    auto score = [&](std::size_t c) { return live[c / K].lp + lps[c]; };
    auto cmp = [&](std::size_t a, std::size_t b) {
      const double sa = score(a), sb = score(b);
      if (sa != sb) return sa > sb;
      const auto& ta = live[a / K].tokens;
      const auto& tb = live[b / K].tokens;
      if (ta != tb) return ta < tb;
      return a % K < b % K;
    };
    const std::size_t take = std::min(cand.size(), static_cast<std::size_t>(width));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), cmp);
    std::vector<Hyp> next;
    parents.clear();
    last.clear();
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t c = cand[i];
      const int r = static_cast<int>(c / K), k = static_cast<int>(c % K);
      Hyp h{live[static_cast<std::size_t>(r)].tokens, score(c)};
      if (k == end_id) {
        done.push_back(std::move(h));
      } else {
        h.tokens.push_back(k);
        next.push_back(std::move(h));
        parents.push_back(r);
        last.push_back(k);
      }
    }
    live = std::move(next);
    if (static_cast<int>(done.size()) >= beam) break;
  }
  DecodeResult res;
  if (!done.empty()) {
    const Hyp* best = &done[0];
    for (const auto& h : done) {
      if (better(h.lp, h.tokens, best->lp, best->tokens)) best = &h;
    }
    res.tokens = best->tokens;
    res.log_prob = best->lp;
    res.completed = true;
  } else if (!live.empty()) {
    res.tokens = live[0].tokens;  // already in rank order
    res.log_prob = live[0].lp;
  }
  return res;
}

DecodeResult greedy_search(StepScorer& scorer, int max_len, int start_id, int end_id) {
  const int K = scorer.vocab_size();
  DecodeResult res;
  std::vector<int> last{start_id};
  std::vector<int> parents;
  for (int t = 0; t < max_len; ++t) {
    const std::vector<double> lps = scorer.step(parents, last);
    const int k = argmax_lowest(lps.data(), K);
    res.log_prob += lps[static_cast<std::size_t>(k)];
    if (k == end_id) {
      res.completed = true;
      break;
    }
    res.tokens.push_back(k);
    last = {k};
    parents = {0};
  }
  return res;
}

DecodeResult beam_decode(const MedModel<float>& model, const EqImage& image, int beam, int max_len) {
  ModelScorer scorer(model, image);
  return beam_search(scorer, beam, max_len, kStartId, kEndId);
}

std::vector<DecodeResult> greedy_decode(const MedModel<float>& model, const std::vector<const EqImage*>& images,
                                        int max_len) {
  std::vector<DecodeResult> out(images.size());
  const int K = model.config().vocab_size;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t stop = std::min(images.size(), start + kChunk);
    std::vector<const EqImage*> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                      images.begin() + static_cast<std::ptrdiff_t>(stop));
    Encoded e = encode_images(model, chunk);
    std::vector<int> last(chunk.size(), kStartId);
    std::vector<bool> finished(chunk.size(), false);
    std::size_t remaining = chunk.size();
    for (int t = 0; t < max_len && remaining > 0; ++t) {
      StepOutput so = decoder_step(model, e.A, e.UA, e.h, e.c, last);
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        if (finished[b]) continue;
        const double* row = so.log_probs.data() + b * K;
        const int k = argmax_lowest(row, K);
        DecodeResult& r = out[start + b];
        r.log_prob += row[k];
        if (k == kEndId) {
          r.completed = true;
          finished[b] = true;
          --remaining;
        } else {
          r.tokens.push_back(k);
          last[b] = k;
        }
      }
    }
  }
  return out;
}

DecodeTrace trace_greedy(const MedModel<float>& model, const EqImage& image, int max_len) {
  Encoded e = encode_images(model, {&image});
  const int K = model.config().vocab_size;
  DecodeTrace tr;
  tr.A = Tensor<float>({e.A.dim(1), e.A.dim(2)}, e.A.data);
  std::vector<int> last{kStartId};
  for (int t = 0; t < max_len; ++t) {
    StepOutput so = decoder_step(model, e.A, e.UA, e.h, e.c, last);
    tr.alpha.push_back(so.alpha.data);
    tr.z.push_back(so.z.data);
    std::vector<double> p(static_cast<std::size_t>(K));
    for (int j = 0; j < K; ++j) p[static_cast<std::size_t>(j)] = std::exp(so.log_probs[static_cast<std::size_t>(j)]);
    tr.probs.push_back(std::move(p));
    const int k = argmax_lowest(so.log_probs.data(), K);
    if (k == kEndId) break;
    last = {k};
  }
  return tr;
}

// ---------------------------------------------------------------------------
// checks

ModelConfig tiny_check_config(CellKind cell) {
  ModelConfig c;
  c.image_height = 16;
  c.image_width = 64;
  c.enc_channels = {4, 4, 4};
  c.feature_dim = 8;
  c.hidden_dim = 16;
  c.embed_dim = 8;
  c.attn_dim = 8;
  c.vocab_size = 12;
  c.max_len = 6;
  c.cell = cell;
  return c;
}

GradCheckResult full_model_grad_check(CellKind cell, std::uint64_t seed) {
  const ModelConfig cfg = tiny_check_config(cell);
  const MedModel<double> model(cfg, seed);
  std::vector<EqImage> images;
  for (std::uint64_t k = 0; k < 2; ++k) {
    EqImage img{cfg.image_height, cfg.image_width, std::vector<float>(static_cast<std::size_t>(cfg.image_height) * cfg.image_width)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      img.pixels[i] = static_cast<float>(static_cast<double>(mix_key(mix_key(seed, 100 + k), i) >> 40) * 0x1.0p-24);
    }
    images.push_back(std::move(img));
  }
  std::vector<std::string> names;
  std::vector<Tensor<double>> inputs;
  for (const auto& [name, t] : model.params()) {
    names.push_back(name);
    Tensor<double> probe(t.shape);
    const std::uint64_t base = mix_key(seed, 0x70726f6265ULL + names.size());
    for (std::size_t i = 0; i < probe.size(); ++i) {
      probe.data[i] = static_cast<double>(mix_key(base, i) >> 11) * 0x1.0p-53 - 0.5;
    }
    inputs.push_back(std::move(probe));
  }
  const std::vector<std::vector<int>> seqs{{kStartId, 5, 7, kEndId}, {kStartId, 9, kEndId}};
  GradFn f = [&](Tape<double>& tape, const std::vector<Var<double>>& in) {
    std::map<std::string, Var<double>> vars;
    for (std::size_t i = 0; i < names.size(); ++i) vars.emplace(names[i], in[i]);
    ModelGraph<double> g(cfg, tape, std::move(vars));
    Var<double> A = g.encode(g.image_batch({&images[0], &images[1]}), true, DropoutKey{seed, 6});
    return g.sequence_loss(g.annotate(A), seqs);
  };
  return grad_check(f, std::move(inputs), 1e-5, 0, 1e-6);
}

// ---------------------------------------------------------------------------
// persistence

void save_checkpoint(const std::string& path, const MedModel<float>& model, const ParamMap<float>* velocities) {
  ParamMap<float> all = model.params();
  if (velocities) {
    for (const auto& [name, v] : *velocities) all.emplace("momentum/" + name, v);
  }
  save_tensors(path, all);
}

MedModel<float> load_checkpoint(const std::string& path, const ModelConfig& cfg, ParamMap<float>* velocities) {
  ParamMap<float> all = load_tensors<float>(path);
  ParamMap<float> params;
  for (auto& [name, t] : all) {
    if (name.rfind("momentum/", 0) == 0) {
      if (velocities) (*velocities)[name.substr(9)] = std::move(t);
    } else {
      params.emplace(name, std::move(t));
    }
  }
  return MedModel<float>(cfg, std::move(params));
}

template class MedModel<float>;
template class MedModel<double>;
template class ModelGraph<float>;
template class ModelGraph<double>;
template LossAndGrads<float> compute_gradients(const MedModel<float>&, const std::vector<Example>&, bool, DropoutKey);
template LossAndGrads<double> compute_gradients(const MedModel<double>&, const std::vector<Example>&, bool, DropoutKey);
template double evaluate_loss(const MedModel<float>&, const std::vector<Example>&);
template double evaluate_loss(const MedModel<double>&, const std::vector<Example>&);

}  // namespace eqd
