#include "eqdesc/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "eqdesc/parallel.hpp"

namespace eqd {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw std::invalid_argument("run config: bad number for " + key + ": '" + v + "'");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long d = 0;
  try {
    d = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw std::invalid_argument("run config: bad integer for " + key + ": '" + v + "'");
  return d;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("write failed: " + p.string());
}

std::string fmt_double(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// run config

bool RunConfig::set(const std::string& key, const std::string& value) {
  if (key.starts_with("model.")) return model.set(key.substr(6), value);
  if (key == "train.lr") train.lr = to_double(key, value);
  else if (key == "train.momentum") train.momentum = to_double(key, value);
  else if (key == "train.weight_decay") train.weight_decay = to_double(key, value);
  else if (key == "train.batch_size") train.batch_size = static_cast<int>(to_int(key, value));
  else if (key == "train.clip_norm") train.clip_norm = to_double(key, value);
  else if (key == "train.seed") train.seed = static_cast<std::uint64_t>(to_int(key, value));
  else if (key == "train.epochs") epochs = static_cast<int>(to_int(key, value));
  else if (key == "train.val_examples") val_examples = static_cast<int>(to_int(key, value));
  else return false;
  return true;
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  std::istringstream m(model.to_text());
  std::string line;
  while (std::getline(m, line)) o << "model." << line << "\n";
  o << "train.lr=" << fmt_double(train.lr) << "\n";
  o << "train.momentum=" << fmt_double(train.momentum) << "\n";
  o << "train.weight_decay=" << fmt_double(train.weight_decay) << "\n";
  o << "train.batch_size=" << train.batch_size << "\n";
  o << "train.clip_norm=" << fmt_double(train.clip_norm) << "\n";
  o << "train.seed=" << train.seed << "\n";
  o << "train.epochs=" << epochs << "\n";
  o << "train.val_examples=" << val_examples << "\n";
  return o.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("run config line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!cfg.set(key, trim(line.substr(eq + 1)))) throw std::invalid_argument("run config: unknown key '" + key + "'");
  }
  return cfg;
}

RunConfig desk_run_config() {
  RunConfig r;
  apply_overrides(r, {"model.enc_channels=8,16,32", "model.feature_dim=32", "model.embed_dim=32",
                      "model.hidden_dim=64", "model.attn_dim=32", "model.dropout=0", "train.lr=0.1",
                      "train.momentum=0.9", "train.batch_size=10", "train.clip_norm=5"});
  return r;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + o + "' is not key=value");
    const std::string key = trim(o.substr(0, eq));
    if (!cfg.set(key, trim(o.substr(eq + 1)))) throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

// ---------------------------------------------------------------------------
// data

SplitData load_split(const std::string& data_dir, Split split) {
  const DatasetManifest m = read_manifest((fs::path(data_dir) / "manifest.jsonl").string());
  SplitData out;
  for (const DatasetRecord* r : m.split(split)) out.records.push_back(*r);
  out.images.resize(out.records.size());
  parallel_for(out.records.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out.images[i] = read_pgm((fs::path(data_dir) / out.records[i].image).string());
  });
  return out;
}

// ---------------------------------------------------------------------------
// decoding

std::vector<std::string> describe_images(const LoadedModel& m, const std::vector<const EqImage*>& images, int beam) {
  if (beam < 1) throw std::invalid_argument("beam width must be positive");
  std::vector<std::string> out(images.size());
  parallel_for(images.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const DecodeResult r = beam_decode(m.model, *images[i], beam, m.config.max_len);
      out[i] = m.vocab.decode(r.tokens);
    }
  });
  return out;
}

LoadedModel load_trained_model(const std::string& checkpoint) {
  const fs::path dir = fs::path(checkpoint).parent_path();
  ModelConfig cfg = ModelConfig::from_text(read_file(dir / "model.cfg"));
  Vocab vocab = Vocab::load((dir / "vocab.txt").string());
  if (vocab.size() != cfg.vocab_size) {
    throw std::runtime_error("vocabulary has " + std::to_string(vocab.size()) + " words, model expects " +
                             std::to_string(cfg.vocab_size));
  }
  MedModel<float> model = load_checkpoint(checkpoint, cfg, nullptr);
  return LoadedModel{cfg, std::move(vocab), std::move(model)};
}

namespace {

double greedy_bleu4(const MedModel<float>& model, const Vocab& vocab, const SplitData& data, int limit) {
  std::size_t n = data.records.size();
  if (limit > 0) n = std::min(n, static_cast<std::size_t>(limit));
  if (n == 0) return 0.0;
  std::vector<const EqImage*> images;
  for (std::size_t i = 0; i < n; ++i) images.push_back(&data.images[i]);
  const auto res = greedy_decode(model, images, model.config().max_len);
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (std::size_t i = 0; i < n; ++i) {
    cands.push_back(split_words(vocab.decode(res[i].tokens)));
    refs.push_back({split_words(data.records[i].description)});
  }
  return bleu(cands, refs, 4);
}

struct TrainState {
  int epoch = 0;
  std::uint64_t steps = 0;
  int best_epoch = 0;
  double best_val_bleu4 = -1.0;
};

std::string state_json(const TrainState& s) {
  ojson j;
  j["epoch"] = s.epoch;
  j["steps"] = s.steps;
  j["best_epoch"] = s.best_epoch;
  j["best_val_bleu4"] = s.best_val_bleu4;
  return j.dump() + "\n";
}

TrainState parse_state(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  TrainState s;
  s.epoch = j.at("epoch").get<int>();
  s.steps = j.at("steps").get<std::uint64_t>();
  s.best_epoch = j.at("best_epoch").get<int>();
  s.best_val_bleu4 = j.at("best_val_bleu4").get<double>();
  return s;
}

}  // namespace

TrainSummary train_run(const TrainOptions& opts) {
  const fs::path data(opts.data_dir), out(opts.out_dir);
  if (!fs::exists(data / "manifest.jsonl")) throw std::runtime_error("no manifest.jsonl in " + data.string());
  if (!fs::exists(data / "vocab.txt")) throw std::runtime_error("no vocab.txt in " + data.string());
  const Vocab vocab = Vocab::load((data / "vocab.txt").string());
  RunConfig cfg = opts.config;
  cfg.model.vocab_size = vocab.size();
  cfg.model.validate();
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be non-negative");

  const SplitData train = load_split(opts.data_dir, Split::Train);
  const SplitData val = load_split(opts.data_dir, Split::Val);
  if (train.records.empty()) throw std::runtime_error("the train split is empty");
  std::vector<Example> examples;
  for (std::size_t i = 0; i < train.records.size(); ++i) {
    examples.push_back({&train.images[i], vocab.encode(train.records[i].description)});
  }

  fs::create_directories(out);
  const std::string vocab_text = read_file(data / "vocab.txt");
  TrainState state;
  std::vector<std::string> log_lines;
  std::optional<MedModel<float>> model;
  ParamMap<float> velocities;
  if (opts.resume) {
    // everything except the epoch budget must match the stored run
    RunConfig stored = RunConfig::from_text(read_file(out / "run.cfg"));
    stored.epochs = cfg.epochs;
    if (stored.to_text() != cfg.to_text()) throw std::runtime_error("resume: config differs from " + (out / "run.cfg").string());
    if (read_file(out / "vocab.txt") != vocab_text) throw std::runtime_error("resume: vocabulary differs from the run's");
    state = parse_state(read_file(out / "train_state.json"));
    model.emplace(load_checkpoint((out / "last.ckpt").string(), cfg.model, &velocities));
    std::istringstream in(read_file(out / "log.jsonl"));
    std::string line;
    while (std::getline(in, line) && static_cast<int>(log_lines.size()) < state.epoch) log_lines.push_back(line);
  } else {
    model.emplace(cfg.model, cfg.train.seed);
    write_file(out / "model.cfg", cfg.model.to_text());
    write_file(out / "vocab.txt", vocab_text);
    write_file(out / "log.jsonl", "");
  }
  write_file(out / "run.cfg", cfg.to_text());

  Trainer trainer(*model, cfg.train);
  if (opts.resume) {
    for (auto& [name, v] : velocities) trainer.velocities().at(name) = v;
    trainer.set_steps(state.steps);
  }

  TrainSummary summary;
  for (int epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const double loss = trainer.run_epoch(examples, epoch - 1);
    const double vb = greedy_bleu4(*model, vocab, val, cfg.val_examples);
    ojson j;
    j["epoch"] = epoch;
    j["train_loss"] = loss;
    j["val_bleu4"] = vb;
    log_lines.push_back(j.dump());
    std::string log_text;
    for (const auto& l : log_lines) log_text += l + "\n";
    write_file(out / "log.jsonl", log_text);

    if (vb > state.best_val_bleu4) {
      state.best_val_bleu4 = vb;
      state.best_epoch = epoch;
      save_checkpoint((out / "best.ckpt").string(), *model, nullptr);
    }
    save_checkpoint((out / "last.ckpt").string(), *model, &trainer.velocities());
    state.epoch = epoch;
    state.steps = trainer.steps();
    write_file(out / "train_state.json", state_json(state));
    summary.last_train_loss = loss;
    if (opts.progress) *opts.progress << j.dump() << std::endl;
  }
  summary.epochs_done = state.epoch;
  summary.best_epoch = state.best_epoch;
  summary.best_val_bleu4 = std::max(0.0, state.best_val_bleu4);
  return summary;
}

EvalReport eval_run(const EvalOptions& opts) {
  SplitData data = load_split(opts.data_dir, opts.split);
  if (opts.limit > 0 && data.records.size() > static_cast<std::size_t>(opts.limit)) {
    data.records.resize(static_cast<std::size_t>(opts.limit));
    data.images.resize(static_cast<std::size_t>(opts.limit));
  }
  if (data.records.empty()) throw std::runtime_error("split " + std::string(split_name(opts.split)) + " is empty");
  std::vector<std::string> ids, refs, cands;
  for (const auto& r : data.records) {
    ids.push_back(std::to_string(r.id));
    refs.push_back(r.description);
  }
  if (opts.gold) {
    cands = refs;
  } else {
    const LoadedModel m = load_trained_model(opts.checkpoint);
    std::vector<const EqImage*> images;
    for (const auto& img : data.images) images.push_back(&img);
    cands = describe_images(m, images, opts.beam);
  }
  return evaluate_corpus(ids, cands, refs);
}

}  // namespace eqd
