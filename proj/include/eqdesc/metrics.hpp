#pragma once

#include <string>
#include <vector>

namespace eqd {

using Tokens = std::vector<std::string>;

Tokens split_words(const std::string& text);

// All corpus functions take one candidate per example and a non-empty set of
// references per example; they throw std::invalid_argument on length
// mismatch or an empty corpus.

// Corpus BLEU: clipped n-gram precisions pooled over the corpus, geometric
// mean with uniform weights 1/max_n, brevity penalty exp(1 - r/c) when c < r
// (r sums the reference length closest to each candidate).
double bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references, int max_n);
// The same formula on a single pair.
double sentence_bleu(const Tokens& candidate, const std::vector<Tokens>& references, int max_n);

// LCS F-measure with beta = 1.2, best over references, averaged over examples.
double rouge_l_sentence(const Tokens& candidate, const std::vector<Tokens>& references);
double rouge_l(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references);

// CIDEr without the x10 factor. For n = 1..4: TF-IDF vectors of n-gram
// counts with idf = log(N) - log(max(1, df)) over the N reference documents,
// cosine similarity averaged over references. An n where both sides have no
// weight (e.g. sentences shorter than n) is left out of the average over n.
// Throws std::invalid_argument when the references hold fewer than two
// distinct documents.
std::vector<double> cider_scores(const std::vector<Tokens>& candidates,
                                 const std::vector<std::vector<Tokens>>& references);
double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references);

struct ExampleScore {
  std::string id;
  std::string candidate;
  std::string reference;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
};

struct EvalReport {
  double bleu1 = 0.0, bleu2 = 0.0, bleu3 = 0.0, bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  std::size_t examples = 0;
  std::vector<ExampleScore> per_example;

  // One summary line, then one line per example.
  std::string to_jsonl() const;
};

// Single reference per example. CIDEr is left at 0 when the references have
// fewer than two distinct documents.
EvalReport evaluate_corpus(const std::vector<std::string>& ids, const std::vector<std::string>& candidates,
                           const std::vector<std::string>& references);

}  // namespace eqd
