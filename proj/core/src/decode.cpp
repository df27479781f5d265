#include "qrw/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qrw/error.hpp"
#include "qrw/rng.hpp"

namespace qrw {
namespace {

// Ids of the `count` largest entries, ordered by value desc then id asc.
template <typename T>
std::vector<TokenId> top_ids(const std::vector<T>& lp, std::size_t count) {
  std::vector<TokenId> ids(lp.size());
  std::iota(ids.begin(), ids.end(), 0);
  count = std::min(count, ids.size());
  auto better = [&](TokenId a, TokenId b) {
    const T va = lp[static_cast<std::size_t>(a)], vb = lp[static_cast<std::size_t>(b)];
    return va != vb ? va > vb : a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(count), ids.end(), better);
  ids.resize(count);
  return ids;
}

std::vector<TokenId> with_bos(const TokenSequence& tokens) {
  std::vector<TokenId> p{kBos};
  p.insert(p.end(), tokens.begin(), tokens.end());
  return p;
}

template <typename T>
std::size_t step_limit(const ModelParameters<T>& params, const DecodeConfig& cfg) {
  return std::min(cfg.max_steps, params.config().max_len);
}

}  // namespace

std::string to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::kGreedy: return "greedy";
    case DecodeMode::kBeam: return "beam";
    case DecodeMode::kTopN: return "top_n";
  }
  return "unknown";
}

DecodeMode decode_mode_from_string(const std::string& s) {
  if (s == "greedy") return DecodeMode::kGreedy;
  if (s == "beam") return DecodeMode::kBeam;
  if (s == "top_n") return DecodeMode::kTopN;
  throw Error("unknown decode mode '" + s + "'");
}

void DecodeConfig::validate(std::size_t vocab_size) const {
  if (k < 1 || k > vocab_size) throw Error("decode config: k must be in [1, vocab size]");
  if (n < 1) throw Error("decode config: n must be >= 1");
  if (max_steps < 1) throw Error("decode config: max_steps must be >= 1");
}

TokenSequence Hypothesis::content() const {
  if (finished && !tokens.empty()) return TokenSequence(tokens.begin(), tokens.end() - 1);
  return tokens;
}

template <typename T>
Hypothesis greedy_decode(const ModelParameters<T>& params, std::span<const TokenId> x,
                         const DecodeConfig& cfg) {
  cfg.validate(params.config().vocab_size);
  const auto enc = encode_source(params, x);
  Hypothesis h;
  const std::size_t limit = step_limit(params, cfg);
  while (!h.finished && h.tokens.size() < limit) {
    const auto lp = decoder_step(params, enc, with_bos(h.tokens));
    const TokenId best = top_ids(lp, 1).front();
    h.tokens.push_back(best);
    h.log_prob += static_cast<double>(lp[static_cast<std::size_t>(best)]);
    h.finished = best == kEos;
  }
  return h;
}

template <typename T>
std::vector<Hypothesis> beam_search(const ModelParameters<T>& params, std::span<const TokenId> x,
                                    const DecodeConfig& cfg) {
  cfg.validate(params.config().vocab_size);
  const auto enc = encode_source(params, x);
  const std::size_t limit = step_limit(params, cfg);
  auto by_score = [](const Hypothesis& a, const Hypothesis& b) {
    return a.log_prob != b.log_prob ? a.log_prob > b.log_prob : a.tokens < b.tokens;
  };
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> pool;
  for (std::size_t step = 0; step < limit && !live.empty(); ++step) {
    struct Candidate {
      double score;
      std::size_t beam;
      TokenId token;
      double token_lp;
    };
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto lp = decoder_step(params, enc, with_bos(live[b].tokens));
      for (TokenId t : top_ids(lp, cfg.k)) {
        const double tlp = static_cast<double>(lp[static_cast<std::size_t>(t)]);
        cands.push_back({live[b].log_prob + tlp, b, t, tlp});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      return a.score > b.score;
    });
    if (cands.size() > cfg.k) cands.resize(cfg.k);
    std::vector<Hypothesis> next;
    for (const auto& c : cands) {
      Hypothesis h = live[c.beam];
      h.tokens.push_back(c.token);
      h.log_prob += c.token_lp;
      h.finished = c.token == kEos;
      (h.finished ? pool : next).push_back(std::move(h));
    }
    live = std::move(next);
    // Scores only decrease, so once k finished hypotheses beat every live one we are done.
    if (pool.size() >= cfg.k && !live.empty()) {
      std::sort(pool.begin(), pool.end(), by_score);
      double best_live = live.front().log_prob;
      for (const auto& h : live) best_live = std::max(best_live, h.log_prob);
      if (pool[cfg.k - 1].log_prob >= best_live) live.clear();
    }
  }
  pool.insert(pool.end(), live.begin(), live.end());
  std::sort(pool.begin(), pool.end(), by_score);
  if (pool.size() > cfg.k) pool.resize(cfg.k);
  return pool;
}

template <typename T>
std::vector<Hypothesis> top_n_sample(const ModelParameters<T>& params, const EncoderState<T>& enc,
                                     const DecodeConfig& cfg) {
  cfg.validate(params.config().vocab_size);
  const std::size_t limit = step_limit(params, cfg);
  const auto first = decoder_step(params, enc, std::vector<TokenId>{kBos});
  std::size_t admissible = 0;
  for (T v : first) admissible += std::exp(v) > T(0);
  if (admissible < cfg.k) {
    throw Error("top_n_sample: only " + std::to_string(admissible) +
                " admissible first tokens for k=" + std::to_string(cfg.k));
  }
  std::vector<Hypothesis> hyps;
  for (TokenId t : top_ids(first, cfg.k)) {
    Hypothesis h;
    h.tokens.push_back(t);
    h.log_prob = static_cast<double>(first[static_cast<std::size_t>(t)]);
    h.finished = t == kEos;
    hyps.push_back(std::move(h));
  }
  std::vector<double> probs;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    auto& h = hyps[i];
    Rng rng(stream_seed(cfg.rng_seed, {i}));
    while (!h.finished && h.tokens.size() < limit) {
      const auto lp = decoder_step(params, enc, with_bos(h.tokens));
      const auto cand = top_ids(lp, cfg.n);
      const double top = static_cast<double>(lp[static_cast<std::size_t>(cand.front())]);
      probs.resize(cand.size());
      double z = 0.0;
      for (std::size_t j = 0; j < cand.size(); ++j) {
        probs[j] = std::exp(static_cast<double>(lp[static_cast<std::size_t>(cand[j])]) - top);
        z += probs[j];
      }
      const double u = uniform01(rng) * z;
      double acc = 0.0;
      std::size_t pick = cand.size() - 1;
      for (std::size_t j = 0; j < cand.size(); ++j) {
        acc += probs[j];
        if (u < acc) {
          pick = j;
          break;
        }
      }
      const TokenId t = cand[pick];
      h.tokens.push_back(t);
      h.log_prob += static_cast<double>(lp[static_cast<std::size_t>(t)]);
      h.finished = t == kEos;
    }
  }
  return hyps;
}

template <typename T>
std::vector<Hypothesis> top_n_sample(const ModelParameters<T>& params, std::span<const TokenId> x,
                                     const DecodeConfig& cfg) {
  return top_n_sample(params, encode_source(params, x), cfg);
}

template <typename T>
std::vector<Hypothesis> decode(const ModelParameters<T>& params, std::span<const TokenId> x,
                               const DecodeConfig& cfg) {
  switch (cfg.mode) {
    case DecodeMode::kGreedy: return {greedy_decode(params, x, cfg)};
    case DecodeMode::kBeam: return beam_search(params, x, cfg);
    case DecodeMode::kTopN: return top_n_sample(params, x, cfg);
  }
  throw Error("decode: unknown mode");
}

#define QRW_INSTANTIATE_DECODE(T)                                                              \
  template Hypothesis greedy_decode<T>(const ModelParameters<T>&, std::span<const TokenId>,    \
                                       const DecodeConfig&);                                   \
  template std::vector<Hypothesis> beam_search<T>(const ModelParameters<T>&,                   \
                                                  std::span<const TokenId>, const DecodeConfig&); \
  template std::vector<Hypothesis> top_n_sample<T>(const ModelParameters<T>&,                  \
                                                   std::span<const TokenId>, const DecodeConfig&); \
  template std::vector<Hypothesis> top_n_sample<T>(const ModelParameters<T>&,                  \
                                                   const EncoderState<T>&, const DecodeConfig&); \
  template std::vector<Hypothesis> decode<T>(const ModelParameters<T>&, std::span<const TokenId>, \
                                             const DecodeConfig&);

QRW_INSTANTIATE_DECODE(float)
QRW_INSTANTIATE_DECODE(double)

}  // namespace qrw
