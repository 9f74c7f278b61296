#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "eqdesc/expr.hpp"
#include "eqdesc/layout.hpp"

namespace eqd {

enum class Split { Train, Val, Test };

std::string_view split_name(Split s);
// Throws std::invalid_argument for names other than train, val, test.
Split parse_split(std::string_view name);

using CategoryCounts = std::array<int, 7>;  // indexed like kAllCategories

// Relative category sizes LE:IE:PLE:LT:DI:IN:FIN of the reference corpus.
inline constexpr std::array<int, 7> kCategoryWeights = {41, 43, 43, 44, 39, 40, 36};

// Splits `total` over the categories in kCategoryWeights proportions by the
// largest-remainder method (ties to the earlier category).
CategoryCounts proportional_counts(int total);

struct DatasetConfig {
  std::map<Split, CategoryCounts> counts{
      {Split::Train, proportional_counts(2000)},
      {Split::Val, proportional_counts(250)},
      {Split::Test, proportional_counts(250)},
  };
  std::uint64_t seed = 1;
  // Each record draws its depth budget uniformly from [1, max_depth].
  int max_depth = 3;
  // Descriptions longer than this (in words) are resampled.
  int max_words = 38;
  int max_retries = 1000;
  RenderConfig render;

  // key=value lines. Keys: seed, max_depth, max_words, max_retries,
  // style_size, image_height, image_width, padding, train/val/test (totals
  // split by proportional_counts) and <split>.<CODE> for one category.
  static DatasetConfig from_text(const std::string& text);
  bool set(const std::string& key, const std::string& value);
  std::string to_text() const;
};

struct DatasetRecord {
  int id = 0;
  Category category = Category::LinearEquation;
  std::uint64_t seed = 0;
  std::string image;  // relative to the dataset directory
  std::string description;
  std::string canonical;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::vector<DatasetRecord> records;

  std::vector<const DatasetRecord*> split(Split s) const;
};

// Rebuilds a record's expression from its stored seed.
Expr record_expression(const DatasetRecord& r, const DatasetConfig& cfg);

// Samples, verbalizes and renders every record, writing images/NNNNNN.pgm,
// manifest.jsonl and vocab.txt (train split, min count 4) under out_dir.
// Duplicate canonical strings anywhere in the corpus are resampled. Throws
// std::runtime_error on I/O failure or when resampling runs out of retries.
DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir);

// JSON lines with fields id, category, seed, image, description, canonical,
// split in that order.
void write_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& path);

class Vocab {
 public:
  static constexpr int kPad = 0, kStart = 1, kEnd = 2, kUnk = 3;

  Vocab();  // specials only

  // Words seen at least min_count times; ids by (count desc, word asc) after
  // the four specials. Throws std::invalid_argument on an empty corpus.
  static Vocab build(const std::vector<std::string>& descriptions, int min_count = 4);

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  int id(const std::string& word) const;  // kUnk when absent
  bool contains(const std::string& word) const { return ids_.count(word) > 0; }

  // start + ids + end
  std::vector<int> encode(const std::string& text) const;
  // Drops specials other than unk; stops at the first end token.
  std::string decode(const std::vector<int>& ids) const;

  // "word<TAB>id" per line, by id.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

}  // namespace eqd
