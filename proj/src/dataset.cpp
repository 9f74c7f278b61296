#include "eqdesc/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "eqdesc/autodiff.hpp"
#include "eqdesc/desc_parser.hpp"
#include "eqdesc/parallel.hpp"
#include "eqdesc/verbalizer.hpp"

namespace eqd {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

CategoryCounts proportional_counts(int total) {
  if (total < 0) throw std::invalid_argument("negative record count");
  const int wsum = 41 + 43 + 43 + 44 + 39 + 40 + 36;
  CategoryCounts out{};
  std::array<int, 7> rem{};
  int assigned = 0;
  for (std::size_t i = 0; i < 7; ++i) {
    const long long num = static_cast<long long>(total) * kCategoryWeights[i];
    out[i] = static_cast<int>(num / wsum);
    rem[i] = static_cast<int>(num % wsum);
    assigned += out[i];
  }
  std::array<std::size_t, 7> order{0, 1, 2, 3, 4, 5, 6};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++out[order[k]];
  return out;
}

// ---------------------------------------------------------------------------
// config

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument(key + ": not an integer: '" + v + "'");
}

int to_count(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < 0 || x > 10'000'000) throw std::invalid_argument(key + ": count out of range");
  return static_cast<int>(x);
}

}  // namespace

bool DatasetConfig::set(const std::string& key, const std::string& value) {
  if (key == "seed") {
    try {
      std::size_t used = 0;
      seed = std::stoull(value, &used);
      if (used != value.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::invalid_argument("seed: not an unsigned integer: '" + value + "'");
    }
  } else if (key == "max_depth") max_depth = static_cast<int>(to_int(key, value));
  else if (key == "max_words") max_words = static_cast<int>(to_int(key, value));
  else if (key == "max_retries") max_retries = static_cast<int>(to_int(key, value));
  else if (key == "style_size") render.style_size = static_cast<int>(to_int(key, value));
  else if (key == "image_height") render.height = static_cast<int>(to_int(key, value));
  else if (key == "image_width") render.width = static_cast<int>(to_int(key, value));
  else if (key == "padding") render.padding = static_cast<int>(to_int(key, value));
  else if (key == "train" || key == "val" || key == "test") {
    counts[parse_split(key)] = proportional_counts(to_count(key, value));
  } else {
    const auto dot = key.find('.');
    if (dot == std::string::npos) return false;
    const Split s = parse_split(key.substr(0, dot));
    const Category c = category_from_code(key.substr(dot + 1));
    const auto idx = static_cast<std::size_t>(std::find(kAllCategories.begin(), kAllCategories.end(), c) - kAllCategories.begin());
    counts[s][idx] = to_count(key, value);
  }
  return true;
}

DatasetConfig DatasetConfig::from_text(const std::string& text) {
  DatasetConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("dataset config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (!cfg.set(key, trim(line.substr(eq + 1)))) throw std::invalid_argument("dataset config: unknown key '" + key + "'");
  }
  return cfg;
}

std::string DatasetConfig::to_text() const {
  std::ostringstream o;
  o << "seed=" << seed << "\n";
  o << "max_depth=" << max_depth << "\n";
  o << "max_words=" << max_words << "\n";
  o << "max_retries=" << max_retries << "\n";
  o << "style_size=" << render.style_size << "\n";
  o << "image_height=" << render.height << "\n";
  o << "image_width=" << render.width << "\n";
  o << "padding=" << render.padding << "\n";
  for (const auto& [split, cc] : counts) {
    for (std::size_t i = 0; i < 7; ++i) {
      o << split_name(split) << "." << category_code(kAllCategories[i]) << "=" << cc[i] << "\n";
    }
  }
  return o.str();
}

std::vector<const DatasetRecord*> DatasetManifest::split(Split s) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// generation

namespace {

Expr expression_from_seed(Category c, std::uint64_t seed, int max_depth) {
  std::mt19937_64 rng(seed);
  const int depth = 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(max_depth)));
  return sample_equation(c, rng, depth);
}

std::string image_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "images/%06d.pgm", id);
  return buf;
}

}  // namespace

Expr record_expression(const DatasetRecord& r, const DatasetConfig& cfg) {
  return expression_from_seed(r.category, r.seed, cfg.max_depth);
}

DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
  if (cfg.max_depth < 1) throw std::invalid_argument("max_depth must be at least 1");
  if (cfg.max_retries < 1) throw std::invalid_argument("max_retries must be at least 1");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir + ": " + ec.message());

  // Sampling and deduplication run in id order so the result does not depend
  // on the thread count; rendering is parallel.
  DatasetManifest m;
  std::vector<Expr> exprs;
  std::unordered_set<std::string> seen;
  int id = 0;
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    auto it = cfg.counts.find(split);
    if (it == cfg.counts.end()) continue;
    for (std::size_t ci = 0; ci < kAllCategories.size(); ++ci) {
      for (int k = 0; k < it->second[ci]; ++k, ++id) {
        const std::uint64_t base = mix_key(cfg.seed, static_cast<std::uint64_t>(id));
        bool ok = false;
        for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
          const std::uint64_t seed = mix_key(base, static_cast<std::uint64_t>(attempt));
          Expr e = expression_from_seed(kAllCategories[ci], seed, cfg.max_depth);
          std::string canon = to_canonical_string(e);
          if (seen.count(canon)) continue;
          Description d = verbalize(e);
          if (static_cast<int>(d.tokens.size()) > cfg.max_words) continue;
          if (!expr_equal(parse_description(d.text), e)) {
            throw std::logic_error("description does not parse back: " + d.text);
          }
          seen.insert(canon);
          DatasetRecord r;
          r.id = id;
          r.category = kAllCategories[ci];
          r.seed = seed;
          r.image = image_name(id);
          r.description = d.text;
          r.canonical = std::move(canon);
          r.split = split;
          m.records.push_back(std::move(r));
          exprs.push_back(std::move(e));
          ok = true;
        }
        if (!ok) {
          throw std::runtime_error("record " + std::to_string(id) + ": no new " +
                                   std::string(category_code(kAllCategories[ci])) + " equation after " +
                                   std::to_string(cfg.max_retries) + " attempts");
        }
      }
    }
  }

  parallel_for(m.records.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      write_pgm((fs::path(out_dir) / m.records[i].image).string(), render_equation(exprs[i], cfg.render));
    }
  });

  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), m);
  std::vector<std::string> train_text;
  for (const auto* r : m.split(Split::Train)) train_text.push_back(r->description);
  const Vocab vocab = train_text.empty() ? Vocab() : Vocab::build(train_text, 4);
  vocab.save((fs::path(out_dir) / "vocab.txt").string());
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + path);
  for (const auto& r : m.records) {
    ojson j;
    j["id"] = r.id;
    j["category"] = std::string(category_code(r.category));
    j["seed"] = r.seed;
    j["image"] = r.image;
    j["description"] = r.description;
    j["canonical"] = r.canonical;
    j["split"] = std::string(split_name(r.split));
    o << j.dump() << "\n";
  }
  if (!o) throw std::runtime_error("write failed: " + path);
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = ojson::parse(line);
      DatasetRecord r;
      r.id = j.at("id").get<int>();
      r.category = category_from_code(j.at("category").get<std::string>());
      r.seed = j.at("seed").get<std::uint64_t>();
      r.image = j.at("image").get<std::string>();
      r.description = j.at("description").get<std::string>();
      r.canonical = j.at("canonical").get<std::string>();
      r.split = parse_split(j.at("split").get<std::string>());
      m.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad manifest record: " + e.what());
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// vocabulary

Vocab::Vocab() {
  for (const char* w : {"<pad>", "<start>", "<end>", "<unk>"}) {
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }
}

Vocab Vocab::build(const std::vector<std::string>& descriptions, int min_count) {
  if (descriptions.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  std::map<std::string, int> counts;
  for (const auto& d : descriptions) {
    for (const auto& w : Description::from_text(d).tokens) ++counts[w];
  }
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [w, c] : counts) {
    if (c >= min_count) kept.emplace_back(w, c);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [w, c] : kept) {
    if (v.ids_.count(w)) continue;
    v.ids_.emplace(w, static_cast<int>(v.words_.size()));
    v.words_.push_back(w);
  }
  return v;
}

int Vocab::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> out{kStart};
  for (const auto& w : Description::from_text(text).tokens) out.push_back(id(w));
  out.push_back(kEnd);
  return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int t : ids) {
    if (t == kEnd) break;
    if (t == kPad || t == kStart || t < 0 || t >= size()) continue;
    if (!out.empty()) out += ' ';
    out += words_[static_cast<std::size_t>(t)];
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + path);
  for (std::size_t i = 0; i < words_.size(); ++i) o << words_[i] << "\t" << i << "\n";
  if (!o) throw std::runtime_error("write failed: " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  Vocab v;
  v.words_.clear();
  v.ids_.clear();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error(path + ": expected word<TAB>id");
    const std::string w = line.substr(0, tab);
    const int id = std::stoi(line.substr(tab + 1));
    if (id != static_cast<int>(v.words_.size())) throw std::runtime_error(path + ": ids must be consecutive from 0");
    v.ids_.emplace(w, id);
    v.words_.push_back(w);
  }
  if (v.words_.size() < 4 || v.words_[0] != "<pad>" || v.words_[1] != "<start>" || v.words_[2] != "<end>" ||
      v.words_[3] != "<unk>") {
    throw std::runtime_error(path + ": vocabulary must start with <pad> <start> <end> <unk>");
  }
  return v;
}

}  // namespace eqd
