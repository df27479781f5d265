#pragma once

#include <span>
#include <vector>

#include "qrw/decode.hpp"
#include "qrw/model.hpp"

namespace qrw {

// Stable log(sum(exp(values))). Throws Error on an empty list.
double log_sum_exp(std::span<const double> values);

struct RewriteConfig {
  std::size_t k = 3;
  std::size_t n = 40;
  std::size_t max_title_len = 12;
  std::size_t max_query_len = 12;
  bool exclude_identity = true;
  std::size_t top_out = 3;
  std::uint64_t rng_seed = 0;

  void validate(std::size_t vocab_size) const;
};

struct ScoredTitle {
  TokenSequence title;
  double log_prob = 0.0;  // log P(title | x) under the forward model
};

struct Contribution {
  std::size_t title = 0;
  double log_prob = 0.0;  // log P(y_t|x) + log P(x'|y_t)
};

struct RewriteCandidate {
  TokenSequence query;
  double log_prob = 0.0;  // marginalized log P(x' | x)
  std::vector<Contribution> provenance;
};

// log sum_t exp(fwd_lp_t + log P(candidate | y_t; bwd)).
template <typename T>
double score_candidate(std::span<const TokenId> candidate, std::span<const ScoredTitle> titles,
                       const ModelParameters<T>& bwd);

// Two hops: k titles from x with the forward model, k queries per title with
// the backward model, de-duplicated and scored against every title.
template <typename T>
std::vector<RewriteCandidate> rewrite(std::span<const TokenId> x, const ModelParameters<T>& fwd,
                                      const ModelParameters<T>& bwd, const RewriteConfig& cfg);

// Single hop with a direct query-to-query model: candidates are scored by
// log P(x'|x) alone.
template <typename T>
std::vector<RewriteCandidate> rewrite_direct(std::span<const TokenId> x, const ModelParameters<T>& q2q,
                                             const RewriteConfig& cfg);

}  // namespace qrw
