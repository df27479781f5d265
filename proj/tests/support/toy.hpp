#pragma once

#include <cmath>
#include <vector>

#include "qrw/model.hpp"

namespace qrw::testing {

inline ModelConfig tiny_config(std::size_t vocab, std::size_t d_model = 8, std::size_t heads = 2,
                               std::size_t d_ff = 16, std::size_t max_len = 6) {
  ModelConfig c;
  c.num_layers = 1;
  c.num_heads = heads;
  c.d_model = d_model;
  c.d_ff = d_ff;
  c.max_len = max_len;
  c.vocab_size = vocab;
  return c;
}

// Random model; biases and gains are perturbed too so every parameter class
// influences the output. With `suppress_specials`, PAD/BOS/UNK get a large
// negative output bias so sampled sequences stay in the regular alphabet.
template <typename T>
ModelParameters<T> toy_model(const ModelConfig& cfg, std::uint64_t seed, bool suppress_specials = false,
                             ModelRole role = ModelRole::kForward) {
  auto p = init_params<T>(cfg, seed, role);
  Rng rng(stream_seed(seed, {0x70e}));
  auto& t = p.tensors();
  for (std::size_t i = 0; i < t.count(); ++i) {
    if (t[i].rows != 1) continue;
    for (auto& v : t[i].data) v += static_cast<T>(0.2 * (2.0 * uniform01(rng) - 1.0));
  }
  if (suppress_specials) {
    auto& b = t[p.out_b()];
    for (TokenId s : {kPad, kBos, kUnk}) b.data[static_cast<std::size_t>(s)] = T(-30);
  }
  return p;
}

// Every sequence over `alphabet` with length in [min_len, max_len].
inline std::vector<TokenSequence> all_sequences(const std::vector<TokenId>& alphabet, std::size_t min_len,
                                                std::size_t max_len) {
  std::vector<TokenSequence> out;
  std::vector<TokenSequence> frontier{{}};
  for (std::size_t len = 0; len <= max_len; ++len) {
    if (len >= min_len) out.insert(out.end(), frontier.begin(), frontier.end());
    std::vector<TokenSequence> next;
    for (const auto& s : frontier) {
      for (auto a : alphabet) {
        auto e = s;
        e.push_back(a);
        next.push_back(std::move(e));
      }
    }
    frontier = std::move(next);
  }
  return out;
}

inline std::vector<TokenId> regular_alphabet(std::size_t vocab) {
  std::vector<TokenId> a;
  for (auto t = kNumSpecials; t < static_cast<TokenId>(vocab); ++t) a.push_back(t);
  return a;
}

// log(sum(exp(v))) accumulated naively in long double.
inline double naive_log_sum_exp(const std::vector<double>& v) {
  long double s = 0.0L;
  for (double e : v) s += std::exp(static_cast<long double>(e));
  return static_cast<double>(std::log(s));
}

}  // namespace qrw::testing
