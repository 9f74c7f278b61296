// Acceptance run: every top-level criterion at its stated tolerance, one
// PASS/FAIL line each. Usage: acceptance [work_dir]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "eqdesc/checks.hpp"
#include "eqdesc/pipeline.hpp"

using namespace eqd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;

// ---- shared corpora ----

const fs::path& desk_corpus() {
  static const fs::path dir = [] {
    fs::path d = g_work / "desk_data";
    fs::remove_all(d);
    generate_dataset(DatasetConfig{}, d.string());
    return d;
  }();
  return dir;
}

struct LoadedCorpus {
  Vocab vocab;
  SplitData train, val, test;
};

const LoadedCorpus& desk_loaded() {
  static const LoadedCorpus c = [] {
    const std::string d = desk_corpus().string();
    return LoadedCorpus{Vocab::load((desk_corpus() / "vocab.txt").string()), load_split(d, Split::Train),
                        load_split(d, Split::Val), load_split(d, Split::Test)};
  }();
  return c;
}

// n training records spread evenly over the categories
std::vector<std::size_t> spread(std::size_t total, std::size_t n) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx.push_back(i * total / n);
  return idx;
}

double greedy_bleu4(const MedModel<float>& model, const std::vector<const EqImage*>& images,
                    const std::vector<std::string>& refs, const Vocab& vocab) {
  const auto res = greedy_decode(model, images, model.config().max_len);
  std::vector<Tokens> c;
  std::vector<std::vector<Tokens>> r;
  for (std::size_t i = 0; i < res.size(); ++i) {
    c.push_back(split_words(vocab.decode(res[i].tokens)));
    r.push_back({split_words(refs[i])});
  }
  return bleu(c, r, 4);
}

// ---- criteria ----

Outcome roundtrip() {
  const auto t0 = Clock::now();
  const SuiteResult r = roundtrip_suite(10000);
  const double s = seconds_since(t0);
  return {r.ok() && s < 30.0, r.lines.at(0).detail + fmt(", %.1f s (limit 30 s)", s)};
}

Outcome gradients() {
  const auto t0 = Clock::now();
  const SuiteResult r = grad_suite();
  const double s = seconds_since(t0);
  double worst_prim = 0.0, worst_model = 0.0;
  int failed = 0;
  for (const auto& l : r.lines) {
    if (!l.pass) {
      ++failed;
      std::cout << "    " << l.name << ": " << l.detail << "\n";
    }
    const auto p = l.detail.find("error ");
    const double e = p == std::string::npos ? 0.0 : std::stod(l.detail.substr(p + 6));
    if (l.name.find("full model") != std::string::npos) worst_model = std::max(worst_model, e);
    else worst_prim = std::max(worst_prim, e);
  }
  std::string d = std::to_string(r.lines.size()) + " checks, " + std::to_string(failed) + " failed; primitives max " +
                  fmt("%.2e (< 1e-6), ", worst_prim) + fmt("full model max %.2e (< 1e-4), ", worst_model) +
                  fmt("%.1f s (limit 60 s)", s);
  return {r.ok() && s < 60.0, d};
}

Outcome attention_invariants() {
  const LoadedCorpus& c = desk_loaded();
  RunConfig rc = desk_run_config();
  rc.model.vocab_size = c.vocab.size();
  int steps = 0;
  double worst_alpha = 0.0, worst_prob = 0.0, worst_hull = 0.0, min_alpha = 1.0;
  for (std::uint64_t seed = 1; steps < 1000; ++seed) {
    MedModel<float> model(rc.model, seed);
    const EqImage& img = c.test.images[(seed * 37) % c.test.images.size()];
    const DecodeTrace tr = trace_greedy(model, img, rc.model.max_len);
    const int L = tr.A.shape[0], D = tr.A.shape[1];
    for (std::size_t t = 0; t < tr.alpha.size() && steps < 1000; ++t, ++steps) {
      double sa = 0.0;
      for (float a : tr.alpha[t]) {
        sa += a;
        min_alpha = std::min(min_alpha, static_cast<double>(a));
      }
      worst_alpha = std::max(worst_alpha, std::abs(sa - 1.0));
      double sp = 0.0;
      for (double p : tr.probs[t]) sp += p;
      worst_prob = std::max(worst_prob, std::abs(sp - 1.0));
      for (int d = 0; d < D; ++d) {
        float lo = tr.A.data[static_cast<std::size_t>(d)], hi = lo;
        for (int i = 0; i < L; ++i) {
          const float v = tr.A.data[static_cast<std::size_t>(i * D + d)];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        const double z = tr.z[t][static_cast<std::size_t>(d)];
        // float accumulation may step outside by a few ulps
        const double slack = 1e-6 * std::max(1.0, static_cast<double>(std::max(std::abs(lo), std::abs(hi))));
        worst_hull = std::max({worst_hull, lo - slack - z, z - hi - slack});
      }
    }
  }
  const bool ok = worst_alpha <= 1e-6 && min_alpha >= 0.0 && worst_prob <= 1e-6 && worst_hull <= 0.0;
  return {ok, std::to_string(steps) + fmt(" steps; max |sum(alpha)-1| %.2e", worst_alpha) +
                  fmt(", min alpha %.2e", min_alpha) + fmt(", max |sum(p)-1| %.2e", worst_prob) +
                  fmt(", hull violation %.2e", std::max(0.0, worst_hull))};
}

// The rigged three-token fixture: vocab {0: end, 1: a, 2: b, 3: start}.
class RiggedScorer : public StepScorer {
 public:
  int vocab_size() const override { return 4; }
  std::vector<double> step(const std::vector<int>& parents, const std::vector<int>& last) override {
    std::vector<std::vector<int>> next;
    for (std::size_t r = 0; r < last.size(); ++r) {
      std::vector<int> p = parents.empty() ? std::vector<int>{} : prefixes_[static_cast<std::size_t>(parents[r])];
      if (last[r] != 3) p.push_back(last[r]);
      next.push_back(p);
    }
    prefixes_ = next;
    std::vector<double> out;
    for (const auto& p : prefixes_) {
      for (double v : probs(p)) out.push_back(v > 0 ? std::log(v) : -1e30);
    }
    return out;
  }
  static std::vector<double> probs(const std::vector<int>& p) {
    if (p.empty()) return {0.0, 0.6, 0.4, 0.0};
    if (p.size() == 1 && p[0] == 1) return {0.34, 0.33, 0.33, 0.0};
    if (p.size() == 1 && p[0] == 2) return {0.9, 0.05, 0.05, 0.0};
    return {1.0, 0.0, 0.0, 0.0};
  }

 private:
  std::vector<std::vector<int>> prefixes_;
};

Outcome beam_consistency(const MedModel<float>& model) {
  const LoadedCorpus& c = desk_loaded();
  const std::size_t n = std::min<std::size_t>(100, c.test.images.size());
  std::vector<const EqImage*> images;
  for (std::size_t i = 0; i < n; ++i) images.push_back(&c.test.images[i]);
  const auto greedy = greedy_decode(model, images, model.config().max_len);
  int same = 0, completed = 0, beam_ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (beam_decode(model, *images[i], 1, model.config().max_len).tokens == greedy[i].tokens) ++same;
    if (greedy[i].completed) {
      ++completed;
      const DecodeResult b = beam_decode(model, *images[i], 20, model.config().max_len);
      if (b.completed && b.log_prob >= greedy[i].log_prob) ++beam_ok;
    }
  }
  // exhaustive argmax over completed sequences of the rigged fixture
  double best = -1e300;
  std::vector<int> best_seq;
  std::vector<std::vector<int>> frontier{{}};
  for (int len = 0; len <= 3; ++len) {
    std::vector<std::vector<int>> grown;
    for (const auto& p : frontier) {
      double lp = 0.0;
      std::vector<int> prefix;
      for (int tok : p) {
        lp += std::log(RiggedScorer::probs(prefix)[static_cast<std::size_t>(tok)]);
        prefix.push_back(tok);
      }
      const double end_p = RiggedScorer::probs(p)[0];
      if (end_p > 0 && lp + std::log(end_p) > best) {
        best = lp + std::log(end_p);
        best_seq = p;
      }
      for (int tok : {1, 2}) {
        if (RiggedScorer::probs(p)[static_cast<std::size_t>(tok)] > 0) {
          auto q = p;
          q.push_back(tok);
          grown.push_back(q);
        }
      }
    }
    frontier = grown;
  }
  RiggedScorer rs;
  const DecodeResult b2 = beam_search(rs, 2, 3, 3, 0);
  const bool rig = b2.completed && b2.tokens == best_seq && std::abs(b2.log_prob - best) < 1e-12;
  const bool ok = same == static_cast<int>(n) && beam_ok == completed && rig;
  return {ok, "beam 1 = greedy on " + std::to_string(same) + "/" + std::to_string(n) + " images; beam 20 >= greedy on " +
                  std::to_string(beam_ok) + "/" + std::to_string(completed) + " completed greedy decodes" +
                  "; rigged fixture beam 2 " + (rig ? "returns" : "misses") + " the exhaustive argmax"};
}

Outcome memorization(std::optional<MedModel<float>>& out_model) {
  const auto t0 = Clock::now();
  const LoadedCorpus& c = desk_loaded();
  RunConfig rc = desk_run_config();
  rc.model.vocab_size = c.vocab.size();
  std::vector<Example> ex;
  std::vector<const EqImage*> images;
  std::vector<std::string> refs;
  for (std::size_t i : spread(c.train.records.size(), 64)) {
    ex.push_back({&c.train.images[i], c.vocab.encode(c.train.records[i].description)});
    images.push_back(&c.train.images[i]);
    // the reference is what the model can spell: out-of-vocabulary words become <unk>
    refs.push_back(c.vocab.decode(ex.back().tokens));
  }
  out_model.emplace(rc.model, rc.train.seed);
  Trainer trainer(*out_model, rc.train);
  double b4 = 0.0;
  int epoch = 0;
  while (epoch < 500) {
    trainer.run_epoch(ex, epoch);
    ++epoch;
    if (epoch % 10 == 0) {
      b4 = greedy_bleu4(*out_model, images, refs, c.vocab);
      if (b4 >= 0.99) break;
    }
  }
  const double s = seconds_since(t0);
  return {b4 >= 0.99 && s < 600.0, fmt("train-set BLEU-4 %.4f (>= 0.99)", b4) + " after " + std::to_string(epoch) +
                                       " epochs, " + fmt("%.0f s (limit 600 s)", s)};
}

Outcome generalization(std::optional<MedModel<float>>& lstm_model) {
  const auto t0 = Clock::now();
  desk_corpus();
  std::map<std::string, double> b4;
  std::map<std::string, std::string> lines;
  for (bool att : {true, false}) {
    const std::string name = att ? "lstm" : "lstm_noatt";
    TrainOptions o;
    o.data_dir = desk_corpus().string();
    o.out_dir = (g_work / ("desk_" + name)).string();
    fs::remove_all(o.out_dir);
    o.config = desk_run_config();
    o.config.model.use_attention = att;
    std::ofstream log(g_work / ("desk_" + name + ".progress"));
    o.progress = &log;
    const TrainSummary ts = train_run(o);
    EvalOptions e;
    e.data_dir = o.data_dir;
    e.split = Split::Test;
    e.checkpoint = (fs::path(o.out_dir) / "best.ckpt").string();
    const EvalReport rep = eval_run(e);
    std::ofstream(g_work / ("desk_" + name + "_test.jsonl")) << rep.to_jsonl();
    b4[name] = rep.bleu4;
    lines[name] = name + fmt(" test BLEU-4 %.4f", rep.bleu4) + fmt(" (B-1 %.4f", rep.bleu1) +
                  fmt(", ROUGE-L %.4f", rep.rouge_l) + fmt(", CIDEr %.4f)", rep.cider) + " best epoch " +
                  std::to_string(ts.best_epoch) + "/" + std::to_string(ts.epochs_done);
    if (att) lstm_model.emplace(load_trained_model(e.checkpoint).model);
  }
  const double s = seconds_since(t0);
  const bool ok = b4["lstm"] >= 0.85 && b4["lstm"] >= b4["lstm_noatt"] - 0.02 && s <= 45 * 60.0;
  return {ok, lines["lstm"] + "; " + lines["lstm_noatt"] + fmt("; %.0f s (limit 2700 s)", s)};
}

Outcome metric_oracles() {
  const SuiteResult r = metrics_suite();
  std::string d;
  for (const auto& l : r.lines) d += (d.empty() ? "" : "; ") + l.name.substr(8) + (l.pass ? " ok" : " FAILED");
  return {r.ok(), d};
}

Outcome vocabulary_rule() {
  // "rare" occurs exactly 3 times, "kept" exactly 4 times
  const std::vector<std::string> corpus = {"x plus rare", "kept plus rare", "kept minus rare", "kept kept",
                                           "x plus x", "x minus x"};
  const Vocab v = Vocab::build(corpus, 4);
  const auto ids = v.encode("rare kept");
  const bool ok = !v.contains("rare") && v.contains("kept") && ids.size() == 4 && ids[1] == Vocab::kUnk &&
                  ids[2] == v.id("kept") && ids[2] != Vocab::kUnk;
  return {ok, std::string("3 occurrences -> ") + (v.contains("rare") ? "kept" : "<unk>") + ", 4 occurrences -> " +
                  (v.contains("kept") ? "kept" : "<unk>")};
}

Outcome determinism() {
  DatasetConfig dc;
  dc.counts[Split::Train] = proportional_counts(40);
  dc.counts[Split::Val] = proportional_counts(10);
  dc.counts[Split::Test] = proportional_counts(10);
  dc.seed = 99;
  std::vector<std::string> diffs;
  std::vector<fs::path> dirs;
  for (const char* tag : {"a", "b"}) {
    const fs::path root = g_work / (std::string("det_") + tag);
    fs::remove_all(root);
    generate_dataset(dc, (root / "data").string());
    TrainOptions o;
    o.data_dir = (root / "data").string();
    o.out_dir = (root / "run").string();
    o.config = desk_run_config();
    o.config.epochs = 2;
    train_run(o);
    EvalOptions e;
    e.data_dir = o.data_dir;
    e.checkpoint = (root / "run" / "best.ckpt").string();
    e.beam = 5;
    std::ofstream(root / "report.jsonl") << eval_run(e).to_jsonl();
    dirs.push_back(root);
  }
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dirs[0])) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dirs[0]);
    ++files;
    if (slurp(entry.path()) != slurp(dirs[1] / rel)) diffs.push_back(rel.string());
  }
  std::string d = std::to_string(files) + " files compared (manifest, images, vocab, loss log, checkpoints, report)";
  if (!diffs.empty()) d += "; differing: " + diffs.front();
  return {diffs.empty() && files > 60, d};
}

Outcome ablation_plumbing() {
  const LoadedCorpus& c = desk_loaded();
  RunConfig rc = desk_run_config();
  rc.model.vocab_size = c.vocab.size();
  std::vector<Example> ex;
  for (std::size_t i : spread(c.train.records.size(), 16)) {
    ex.push_back({&c.train.images[i], c.vocab.encode(c.train.records[i].description)});
  }
  // freezing
  ModelConfig frozen_cfg = rc.model;
  frozen_cfg.freeze_encoder = true;
  MedModel<float> frozen(frozen_cfg, 1);
  const auto lg = compute_gradients(frozen, ex, true, DropoutKey{1, 2});
  bool zero = true;
  std::size_t enc_params = 0;
  for (const auto& [name, g] : lg.grads) {
    if (!is_encoder_parameter(name)) continue;
    ++enc_params;
    for (float v : g.data) zero = zero && v == 0.0f;
  }
  std::string d = std::string("frozen encoder gradients ") + (zero ? "all zero" : "NONZERO") + " over " +
                  std::to_string(enc_params) + " tensors";
  bool ok = zero && enc_params > 0;
  for (CellKind cell : {CellKind::Rnn, CellKind::Gru, CellKind::Lstm}) {
    ModelConfig mc = rc.model;
    mc.cell = cell;
    MedModel<float> model(mc, rc.train.seed);
    TrainConfig tc = rc.train;
    tc.batch_size = static_cast<int>(ex.size());
    Trainer trainer(model, tc);
    double loss = evaluate_loss(model, ex);
    int step = 0;
    while (step < 500 && loss >= 0.1) {
      trainer.step(ex);
      ++step;
      if (step % 5 == 0 || step == 500) loss = evaluate_loss(model, ex);
    }
    ok = ok && loss < 0.1;
    d += "; " + cell_name(cell) + fmt(" loss %.4f", loss) + " at step " + std::to_string(step);
  }
  return {ok, d};
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "eqdesc_acceptance";
  fs::create_directories(g_work);
  std::cout << "work directory " << g_work.string() << "\n" << std::flush;

  std::map<int, std::pair<std::string, Outcome>> results;
  auto run = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    results[id] = {name, o};
    std::cout << "[" << (o.pass ? "PASS" : "FAIL") << "] " << id << ". " << name << " -- " << o.detail
              << fmt(" [%.1f s]", seconds_since(t0)) << "\n"
              << std::flush;
  };

  std::optional<MedModel<float>> memo_model, desk_model;
  run(1, "round-trip unambiguity", roundtrip);
  run(2, "gradient correctness", gradients);
  run(3, "attention/softmax invariants", attention_invariants);
  run(7, "metric oracles", metric_oracles);
  run(8, "vocabulary rule", vocabulary_rule);
  run(9, "determinism", determinism);
  run(10, "ablation plumbing", ablation_plumbing);
  run(5, "memorization sanity", [&] { return memorization(memo_model); });
  run(6, "desk-scale generalization", [&] { return generalization(desk_model); });
  run(4, "beam consistency", [&] {
    if (!desk_model && !memo_model) return Outcome{false, "no trained model available"};
    return beam_consistency(desk_model ? *desk_model : *memo_model);
  });

  std::cout << "\nsummary\n";
  int passed = 0;
  for (const auto& [id, r] : results) {
    std::cout << (r.second.pass ? "PASS " : "FAIL ") << id << ". " << r.first << "\n";
    passed += r.second.pass ? 1 : 0;
  }
  std::cout << passed << "/" << results.size() << " criteria passed\n";
  return passed == static_cast<int>(results.size()) ? 0 : 1;
}
