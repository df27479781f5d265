#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qrw/data.hpp"
#include "qrw/decode.hpp"
#include "qrw/model.hpp"

namespace qrw {

// Forward scores titles given queries; backward scores queries given titles.
enum class Direction { kForward, kBackward };

// exp of the mean per-token NLL (EOS included), teacher forced.
template <typename T>
double perplexity(const ClickLogDataset& dataset, const ModelParameters<T>& params, Direction dir);

// Mean over queries of the sampled translate-back log-likelihood. Every
// query is decoded with the same `cfg` (and therefore the same seed).
template <typename T>
double translate_back_log_prob(std::span<const TokenSequence> queries, const ModelParameters<T>& fwd,
                               const ModelParameters<T>& bwd, const DecodeConfig& cfg);

// Per-position argmax agreement of the backward model with the original
// query tokens (EOS excluded), teacher forced on each sampled title. Titles
// are weighted by P(y|x) renormalized over the sampled set; queries count equally.
template <typename T>
double translate_back_accuracy(std::span<const TokenSequence> queries, const ModelParameters<T>& fwd,
                               const ModelParameters<T>& bwd, const DecodeConfig& cfg);

// Same quantity for one query over an explicit title set.
template <typename T>
double translate_back_accuracy_over(std::span<const TokenId> x, const ModelParameters<T>& fwd,
                                    const ModelParameters<T>& bwd,
                                    const std::vector<TokenSequence>& titles);

// F1 over the sets of unigrams and bigrams of two token sequences.
double ngram_f1(std::span<const std::string> original, std::span<const std::string> rewritten);
double ngram_f1(std::string_view original, std::string_view rewritten);

// Unit-cost Levenshtein distance over Unicode code points (UTF-8 input).
std::size_t edit_distance(std::string_view a, std::string_view b);
// Same over whitespace tokens.
std::size_t token_edit_distance(std::string_view a, std::string_view b);

double cosine(std::span<const double> a, std::span<const double> b);

// Mean of the forward encoder's context vectors over non-PAD positions.
template <typename T>
std::vector<double> pooled_embedding(std::span<const TokenId> x, const ModelParameters<T>& fwd);

// Cosine of the pooled forward-encoder embeddings; throws on a zero vector.
template <typename T>
double cosine_similarity(std::span<const TokenId> a, std::span<const TokenId> b,
                         const ModelParameters<T>& fwd);

struct QueryRewrites {
  std::string query;
  std::vector<std::string> rewrites;  // best first
};

// Fraction of queries whose top-m rewrites contain, as a contiguous token
// span, a ground-truth surface of the query's concept other than the one the
// query itself uses. The query's concept is the one whose surface it contains.
double synonym_recall_at_m(const std::vector<QueryRewrites>& rewrites,
                           const std::map<std::size_t, std::vector<std::string>>& truth,
                           std::size_t m);

struct PairMetrics {
  std::string original;
  std::string rewrite;
  std::string system;
  double f1 = 0.0;
  double edit_distance = 0.0;
  double cosine = 0.0;
};

struct EvalReport {
  std::vector<std::pair<std::string, double>> aggregates;  // metric -> value, in insertion order
  std::vector<PairMetrics> pairs;

  void set(const std::string& metric, double value);
  std::optional<double> get(const std::string& metric) const;
  // TSV `metric<TAB>value`.
  void write_tsv(const std::string& path) const;
  // JSON lines, one object per rewrite pair.
  void write_pairs_jsonl(const std::string& path) const;
};

// Per-pair metrics for one system's rewrites; appends to `report.pairs`
// and returns (mean F1, mean edit distance, mean cosine).
template <typename T>
std::array<double, 3> score_rewrites(const std::vector<QueryRewrites>& rewrites,
                                     const std::string& system, const Vocabulary& vocab,
                                     const ModelParameters<T>& fwd, EvalReport& report);

}  // namespace qrw
