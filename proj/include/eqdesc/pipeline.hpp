#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "eqdesc/dataset.hpp"
#include "eqdesc/metrics.hpp"
#include "eqdesc/model.hpp"

namespace eqd {

// Everything a training run depends on besides the data. Text form is
// key=value lines with "model." and "train." prefixes.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  int epochs = 60;
  // Validation images decoded (greedily) after each epoch; 0 means all.
  int val_examples = 0;

  static RunConfig from_text(const std::string& text);
  // Returns false for unknown keys; malformed values throw.
  bool set(const std::string& key, const std::string& value);
  std::string to_text() const;
};

// Applies "key=value" overrides in order. Throws std::invalid_argument on an
// unknown key or a missing '='.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

// The configuration the full-size experiments use: narrower than the
// ModelConfig defaults and a much larger step size, so 60 epochs fit on one
// core. configs/desk.cfg holds the same values.
RunConfig desk_run_config();

struct SplitData {
  std::vector<DatasetRecord> records;
  std::vector<EqImage> images;
};

// Records of one split with their images. Throws std::runtime_error when the
// manifest or an image cannot be read.
SplitData load_split(const std::string& data_dir, Split split);

struct TrainOptions {
  std::string data_dir;
  std::string out_dir;
  RunConfig config;
  // Continue from out_dir/last.ckpt and train_state.json.
  bool resume = false;
  std::ostream* progress = nullptr;
};

struct TrainSummary {
  int epochs_done = 0;
  int best_epoch = 0;
  double best_val_bleu4 = 0.0;
  double last_train_loss = 0.0;
};

// Writes into out_dir: run.cfg, model.cfg, vocab.txt, log.jsonl (one line per
// epoch: epoch, train_loss, val_bleu4), last.ckpt (with momentum),
// best.ckpt (best validation BLEU-4, earliest on ties) and train_state.json.
// Throws std::runtime_error on missing inputs or when a resumed run's config
// or vocabulary differ from the stored ones.
TrainSummary train_run(const TrainOptions& opts);

// Reads model.cfg and vocab.txt next to a checkpoint.
struct LoadedModel {
  ModelConfig config;
  Vocab vocab;
  MedModel<float> model;
};
LoadedModel load_trained_model(const std::string& checkpoint);

struct EvalOptions {
  std::string data_dir;
  Split split = Split::Test;
  std::string checkpoint;
  int beam = 20;
  // Scores the references against themselves; no checkpoint is needed.
  bool gold = false;
  // Only the first `limit` records of the split when positive.
  int limit = 0;
};

// Decodes every image of the split and scores the descriptions.
EvalReport eval_run(const EvalOptions& opts);

// Beam (or greedy for beam 1) decoding of several images, in parallel.
std::vector<std::string> describe_images(const LoadedModel& m, const std::vector<const EqImage*>& images, int beam);

}  // namespace eqd
