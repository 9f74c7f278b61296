#include "eqdesc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace eqd {

Tokens split_words(const std::string& text) {
  Tokens out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

namespace {

using NgramCounts = std::map<Tokens, int>;

NgramCounts ngrams(const Tokens& t, int n) {
  NgramCounts out;
  const int len = static_cast<int>(t.size());
  for (int i = 0; i + n <= len; ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
  return out;
}

void check_corpus(std::size_t c, const std::vector<std::vector<Tokens>>& refs) {
  if (c != refs.size()) {
    throw std::invalid_argument("metric: " + std::to_string(c) + " candidates but " + std::to_string(refs.size()) +
                                " reference sets");
  }
  if (c == 0) throw std::invalid_argument("metric: empty corpus");
  for (const auto& r : refs) {
    if (r.empty()) throw std::invalid_argument("metric: example without references");
  }
}

struct BleuStats {
  std::vector<double> matched, total;
  double cand_len = 0.0, ref_len = 0.0;
};

void accumulate_bleu(BleuStats& s, const Tokens& cand, const std::vector<Tokens>& refs, int max_n) {
  for (int n = 1; n <= max_n; ++n) {
    const NgramCounts c = ngrams(cand, n);
    NgramCounts max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, k] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
    }
    for (const auto& [g, k] : c) {
      auto it = max_ref.find(g);
      if (it != max_ref.end()) s.matched[static_cast<std::size_t>(n - 1)] += std::min(k, it->second);
      s.total[static_cast<std::size_t>(n - 1)] += k;
    }
  }
  const double c = static_cast<double>(cand.size());
  // closest reference length, shorter on ties
  double best = static_cast<double>(refs[0].size());
  for (const auto& r : refs) {
    const double rl = static_cast<double>(r.size());
    if (std::abs(rl - c) < std::abs(best - c) || (std::abs(rl - c) == std::abs(best - c) && rl < best)) best = rl;
  }
  s.cand_len += c;
  s.ref_len += best;
}

double finish_bleu(const BleuStats& s, int max_n) {
  if (s.cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < max_n; ++n) {
    const auto i = static_cast<std::size_t>(n);
    if (s.matched[i] == 0.0 || s.total[i] == 0.0) return 0.0;
    log_sum += std::log(s.matched[i] / s.total[i]);
  }
  const double bp = s.cand_len < s.ref_len ? std::exp(1.0 - s.ref_len / s.cand_len) : 1.0;
  return bp * std::exp(log_sum / max_n);
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references, int max_n) {
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("bleu: max_n must be in 1..4");
  check_corpus(candidates.size(), references);
  BleuStats s{std::vector<double>(static_cast<std::size_t>(max_n), 0.0), std::vector<double>(static_cast<std::size_t>(max_n), 0.0)};
  for (std::size_t i = 0; i < candidates.size(); ++i) accumulate_bleu(s, candidates[i], references[i], max_n);
  return finish_bleu(s, max_n);
}

double sentence_bleu(const Tokens& candidate, const std::vector<Tokens>& references, int max_n) {
  return bleu({candidate}, {references}, max_n);
}

double rouge_l_sentence(const Tokens& candidate, const std::vector<Tokens>& references) {
  constexpr double beta2 = 1.2 * 1.2;
  double best = 0.0;
  for (const auto& r : references) {
    const double l = static_cast<double>(lcs(candidate, r));
    if (l == 0.0) continue;
    const double p = l / static_cast<double>(candidate.size());
    const double rc = l / static_cast<double>(r.size());
    best = std::max(best, (1.0 + beta2) * p * rc / (rc + beta2 * p));
  }
  return best;
}

double rouge_l(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  check_corpus(candidates.size(), references);
  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) total += rouge_l_sentence(candidates[i], references[i]);
  return total / static_cast<double>(candidates.size());
}

std::vector<double> cider_scores(const std::vector<Tokens>& candidates,
                                 const std::vector<std::vector<Tokens>>& references) {
  check_corpus(candidates.size(), references);
  std::set<std::vector<Tokens>> distinct(references.begin(), references.end());
  if (distinct.size() < 2) throw std::invalid_argument("cider: need at least two distinct reference documents");
  const double N = static_cast<double>(references.size());
  std::vector<double> sum_cos(candidates.size(), 0.0);
  std::vector<int> used_n(candidates.size(), 0);
  for (int n = 1; n <= 4; ++n) {
    std::map<Tokens, int> df;
    std::vector<std::vector<NgramCounts>> ref_counts(references.size());
    for (std::size_t i = 0; i < references.size(); ++i) {
      std::set<Tokens> doc;
      for (const auto& r : references[i]) {
        ref_counts[i].push_back(ngrams(r, n));
        for (const auto& [g, k] : ref_counts[i].back()) doc.insert(g);
      }
      for (const auto& g : doc) ++df[g];
    }
    auto weight = [&](const Tokens& g, int count) {
      auto it = df.find(g);
      const double d = it == df.end() ? 1.0 : std::max(1, it->second);
      return count * (std::log(N) - std::log(d));
    };
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const NgramCounts c = ngrams(candidates[i], n);
      std::map<Tokens, double> vc;
      double nc = 0.0;
      for (const auto& [g, k] : c) {
        const double w = weight(g, k);
        vc[g] = w;
        nc += w * w;
      }
      double cos_sum = 0.0;
      bool any = false;
      for (const auto& rc : ref_counts[i]) {
        double nr = 0.0, dot = 0.0;
        for (const auto& [g, k] : rc) {
          const double w = weight(g, k);
          nr += w * w;
          auto it = vc.find(g);
          if (it != vc.end()) dot += it->second * w;
        }
        if (nc == 0.0 && nr == 0.0) continue;
        any = true;
        if (nc > 0.0 && nr > 0.0) cos_sum += dot / (std::sqrt(nc) * std::sqrt(nr));
      }
      if (any) {
        sum_cos[i] += cos_sum / static_cast<double>(ref_counts[i].size());
        ++used_n[i];
      }
    }
  }
  std::vector<double> out(candidates.size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (used_n[i] > 0) out[i] = sum_cos[i] / used_n[i];
  }
  return out;
}

double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  const auto s = cider_scores(candidates, references);
  double total = 0.0;
  for (double v : s) total += v;
  return total / static_cast<double>(s.size());
}

EvalReport evaluate_corpus(const std::vector<std::string>& ids, const std::vector<std::string>& candidates,
                           const std::vector<std::string>& references) {
  if (ids.size() != candidates.size() || candidates.size() != references.size()) {
    throw std::invalid_argument("evaluate_corpus: ids, candidates and references differ in length");
  }
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cands.push_back(split_words(candidates[i]));
    refs.push_back({split_words(references[i])});
  }
  EvalReport rep;
  rep.examples = candidates.size();
  rep.bleu1 = bleu(cands, refs, 1);
  rep.bleu2 = bleu(cands, refs, 2);
  rep.bleu3 = bleu(cands, refs, 3);
  rep.bleu4 = bleu(cands, refs, 4);
  rep.rouge_l = rouge_l(cands, refs);
  std::vector<double> cs(cands.size(), 0.0);
  std::set<std::vector<Tokens>> distinct(refs.begin(), refs.end());
  if (distinct.size() >= 2) cs = cider_scores(cands, refs);
  double ctotal = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    ExampleScore e;
    e.id = ids[i];
    e.candidate = candidates[i];
    e.reference = references[i];
    e.bleu4 = sentence_bleu(cands[i], refs[i], 4);
    e.rouge_l = rouge_l_sentence(cands[i], refs[i]);
    e.cider = cs[i];
    ctotal += cs[i];
    rep.per_example.push_back(std::move(e));
  }
  rep.cider = ctotal / static_cast<double>(cands.size());
  return rep;
}

std::string EvalReport::to_jsonl() const {
  using ojson = nlohmann::ordered_json;
  std::string out;
  ojson s;
  s["type"] = "summary";
  s["examples"] = examples;
  s["bleu1"] = bleu1;
  s["bleu2"] = bleu2;
  s["bleu3"] = bleu3;
  s["bleu4"] = bleu4;
  s["rouge_l"] = rouge_l;
  s["cider"] = cider;
  out += s.dump() + "\n";
  for (const auto& e : per_example) {
    ojson j;
    j["type"] = "example";
    j["id"] = e.id;
    j["candidate"] = e.candidate;
    j["reference"] = e.reference;
    j["bleu4"] = e.bleu4;
    j["rouge_l"] = e.rouge_l;
    j["cider"] = e.cider;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace eqd
