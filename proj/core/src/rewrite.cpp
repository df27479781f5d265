#include "qrw/rewrite.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "qrw/error.hpp"
#include "qrw/rng.hpp"

namespace qrw {

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw Error("log_sum_exp of an empty list");
  const double m = *std::max_element(values.begin(), values.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

void RewriteConfig::validate(std::size_t vocab_size) const {
  if (k < 1 || k > vocab_size) throw Error("rewrite config: k must be in [1, vocab size]");
  if (n < 1) throw Error("rewrite config: n must be >= 1");
  if (max_title_len < 1 || max_query_len < 1) throw Error("rewrite config: lengths must be >= 1");
  if (top_out > k * k) throw Error("rewrite config: top_out must be <= k*k");
}

template <typename T>
double score_candidate(std::span<const TokenId> candidate, std::span<const ScoredTitle> titles,
                       const ModelParameters<T>& bwd) {
  if (titles.empty()) throw Error("score_candidate: no titles");
  std::vector<double> terms;
  terms.reserve(titles.size());
  for (const auto& t : titles) {
    terms.push_back(t.log_prob + static_cast<double>(sequence_log_prob(
                                     bwd, std::span<const TokenId>(t.title), candidate)));
  }
  return log_sum_exp(terms);
}

namespace {

DecodeConfig sampler_config(const RewriteConfig& cfg, std::size_t max_steps, std::uint64_t seed) {
  DecodeConfig dc;
  dc.k = cfg.k;
  dc.n = cfg.n;
  dc.max_steps = max_steps;
  dc.mode = DecodeMode::kTopN;
  dc.rng_seed = seed;
  return dc;
}

void sort_and_trim(std::vector<RewriteCandidate>& out, std::size_t top_out) {
  std::stable_sort(out.begin(), out.end(), [](const RewriteCandidate& a, const RewriteCandidate& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.query < b.query;
  });
  if (out.size() > top_out) out.resize(top_out);
}

}  // namespace

template <typename T>
std::vector<RewriteCandidate> rewrite(std::span<const TokenId> x, const ModelParameters<T>& fwd,
                                      const ModelParameters<T>& bwd, const RewriteConfig& cfg) {
  if (x.empty()) throw Error("rewrite: empty query");
  cfg.validate(fwd.config().vocab_size);
  const TokenSequence original(x.begin(), x.end());

  std::vector<ScoredTitle> titles;
  std::set<TokenSequence> seen_titles;
  for (const auto& h : top_n_sample(fwd, x, sampler_config(cfg, cfg.max_title_len, stream_seed(cfg.rng_seed, {0})))) {
    auto y = h.content();
    if (y.empty() || has_control_token(y) || !seen_titles.insert(y).second) continue;
    const double lp = static_cast<double>(sequence_log_prob(fwd, x, std::span<const TokenId>(y)));
    titles.push_back({std::move(y), lp});
  }
  if (titles.empty()) return {};

  std::vector<TokenSequence> candidates;
  std::set<TokenSequence> seen;
  for (std::size_t t = 0; t < titles.size(); ++t) {
    const auto dc = sampler_config(cfg, cfg.max_query_len, stream_seed(cfg.rng_seed, {1, t}));
    for (const auto& h : top_n_sample(bwd, std::span<const TokenId>(titles[t].title), dc)) {
      auto q = h.content();
      if (q.empty() || has_control_token(q)) continue;
      if (cfg.exclude_identity && q == original) continue;
      if (seen.insert(q).second) candidates.push_back(std::move(q));
    }
  }

  std::vector<RewriteCandidate> out;
  for (auto& q : candidates) {
    RewriteCandidate c;
    std::vector<double> terms;
    for (std::size_t t = 0; t < titles.size(); ++t) {
      const double lp = titles[t].log_prob + static_cast<double>(sequence_log_prob(
                                                 bwd, std::span<const TokenId>(titles[t].title),
                                                 std::span<const TokenId>(q)));
      c.provenance.push_back({t, lp});
      terms.push_back(lp);
    }
    c.log_prob = log_sum_exp(terms);
    c.query = std::move(q);
    out.push_back(std::move(c));
  }
  sort_and_trim(out, cfg.top_out);
  return out;
}

template <typename T>
std::vector<RewriteCandidate> rewrite_direct(std::span<const TokenId> x, const ModelParameters<T>& q2q,
                                             const RewriteConfig& cfg) {
  if (x.empty()) throw Error("rewrite: empty query");
  cfg.validate(q2q.config().vocab_size);
  const TokenSequence original(x.begin(), x.end());
  std::vector<RewriteCandidate> out;
  std::set<TokenSequence> seen;
  for (const auto& h : top_n_sample(q2q, x, sampler_config(cfg, cfg.max_query_len, stream_seed(cfg.rng_seed, {2})))) {
    auto q = h.content();
    if (q.empty() || has_control_token(q) || (cfg.exclude_identity && q == original) || !seen.insert(q).second) continue;
    RewriteCandidate c;
    c.log_prob = static_cast<double>(sequence_log_prob(q2q, x, std::span<const TokenId>(q)));
    c.provenance.push_back({0, c.log_prob});
    c.query = std::move(q);
    out.push_back(std::move(c));
  }
  sort_and_trim(out, cfg.top_out);
  return out;
}

#define QRW_INSTANTIATE_REWRITE(T)                                                                 \
  template double score_candidate<T>(std::span<const TokenId>, std::span<const ScoredTitle>,       \
                                     const ModelParameters<T>&);                                   \
  template std::vector<RewriteCandidate> rewrite<T>(std::span<const TokenId>,                      \
                                                    const ModelParameters<T>&,                     \
                                                    const ModelParameters<T>&, const RewriteConfig&); \
  template std::vector<RewriteCandidate> rewrite_direct<T>(                                        \
      std::span<const TokenId>, const ModelParameters<T>&, const RewriteConfig&);

QRW_INSTANTIATE_REWRITE(float)
QRW_INSTANTIATE_REWRITE(double)

}  // namespace qrw
