// eqdesc: dataset generation, training, evaluation and self-checks.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>

#include "eqdesc/checks.hpp"
#include "eqdesc/dataset.hpp"
#include "eqdesc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace eqd;

namespace {

constexpr int kOk = 0;
constexpr int kSuiteFailure = 1;
constexpr int kUsageOrIo = 2;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

int run_gen_data(const std::string& config, const std::string& out, const std::optional<std::uint64_t>& seed,
                 const std::vector<std::string>& overrides) {
  DatasetConfig cfg = config.empty() ? DatasetConfig{} : DatasetConfig::from_text(read_text(config));
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || !cfg.set(o.substr(0, eq), o.substr(eq + 1))) {
      throw std::invalid_argument("bad dataset override '" + o + "'");
    }
  }
  if (seed) cfg.seed = *seed;
  const DatasetManifest m = generate_dataset(cfg, out);
  write_text(fs::path(out) / "dataset.cfg", cfg.to_text());
  std::cout << "wrote " << m.records.size() << " records to " << out << "\n";
  return kOk;
}

int run_train(const std::string& data, const std::string& config, const std::string& out, bool resume,
              const std::vector<std::string>& overrides) {
  TrainOptions opts;
  opts.data_dir = data;
  opts.out_dir = out;
  opts.resume = resume;
  if (!config.empty()) opts.config = RunConfig::from_text(read_text(config));
  apply_overrides(opts.config, overrides);
  opts.progress = &std::cout;
  const TrainSummary s = train_run(opts);
  std::cout << "trained " << s.epochs_done << " epochs; best val BLEU-4 " << s.best_val_bleu4 << " at epoch "
            << s.best_epoch << "\n";
  return kOk;
}

int run_eval(const EvalOptions& opts, const std::string& out) {
  const EvalReport rep = eval_run(opts);
  const std::string text = rep.to_jsonl();
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
    std::cout << text.substr(0, text.find('\n') + 1);
  }
  return kOk;
}

int run_describe(const std::string& image, const std::string& checkpoint, int beam) {
  const EqImage img = read_pgm(image);
  const LoadedModel m = load_trained_model(checkpoint);
  if (img.height != m.config.image_height || img.width != m.config.image_width) {
    throw std::invalid_argument("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                ", model expects " + std::to_string(m.config.image_height) + "x" +
                                std::to_string(m.config.image_width));
  }
  std::cout << describe_images(m, {&img}, beam).front() << "\n";
  return kOk;
}

int run_check(const std::string& suite, int samples) {
  bool ok = true;
  auto run = [&](const SuiteResult& r) {
    r.print(std::cout);
    ok = ok && r.ok();
  };
  if (suite == "roundtrip" || suite == "all") run(roundtrip_suite(samples));
  if (suite == "grad" || suite == "all") run(grad_suite());
  if (suite == "metrics" || suite == "all") run(metrics_suite());
  std::cout << (ok ? "all checks passed" : "checks FAILED") << "\n";
  return ok ? kOk : kSuiteFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equation image description: data generation, training, evaluation"};
  app.require_subcommand(1);

  std::string config, out, data, checkpoint, image, split = "test", suite = "all", report;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool resume = false, gold = false;
  int beam = 20, samples = 10000, limit = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen->add_option("--config", config, "Dataset config file (key=value lines)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Overrides the config seed");
  gen->add_option("--set", overrides, "key=value override, repeatable");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--config", config, "Run config file (model.* and train.* keys)");
  train->add_option("--out", out, "Run directory")->required();
  train->add_option("--set", overrides, "key=value override, repeatable");
  train->add_flag("--resume", resume, "Continue the run in --out");

  auto* eval = app.add_subcommand("eval", "Decode a split and score it");
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--split", split, "train, val or test")->capture_default_str();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (model.cfg and vocab.txt beside it)");
  eval->add_option("--beam", beam, "Beam width")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--out", report, "Report path (JSON lines); stdout when absent");
  eval->add_option("--limit", limit, "Only the first N records");
  eval->add_flag("--gold", gold, "Score the references against themselves");

  auto* describe = app.add_subcommand("describe", "Describe one equation image");
  describe->add_option("--image", image, "PGM image")->required();
  describe->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  describe->add_option("--beam", beam, "Beam width")->capture_default_str()->check(CLI::PositiveNumber);

  auto* check = app.add_subcommand("check", "Run self-check suites");
  check->add_option("--suite", suite, "roundtrip, grad, metrics or all")
      ->capture_default_str()
      ->check(CLI::IsMember({"roundtrip", "grad", "metrics", "all"}));
  check->add_option("--samples", samples, "Round-trip sample count")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageOrIo;
  }

  try {
    if (*gen) return run_gen_data(config, out, seed, overrides);
    if (*train) return run_train(data, config, out, resume, overrides);
    if (*eval) {
      if (checkpoint.empty() && !gold) throw std::invalid_argument("eval needs --checkpoint or --gold");
      EvalOptions opts;
      opts.data_dir = data;
      opts.split = parse_split(split);
      opts.checkpoint = checkpoint;
      opts.beam = beam;
      opts.gold = gold;
      opts.limit = limit;
      return run_eval(opts, report);
    }
    if (*describe) return run_describe(image, checkpoint, beam);
    if (*check) return run_check(suite, samples);
  } catch (const std::exception& e) {
    std::cerr << "eqdesc: " << e.what() << "\n";
    return kUsageOrIo;
  }
  return kUsageOrIo;
}
