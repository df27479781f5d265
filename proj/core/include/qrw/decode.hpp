#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qrw/model.hpp"

namespace qrw {

enum class DecodeMode { kGreedy, kBeam, kTopN };

std::string to_string(DecodeMode mode);
DecodeMode decode_mode_from_string(const std::string& s);

struct DecodeConfig {
  std::size_t k = 3;          // hypotheses kept / sampled
  std::size_t n = 40;         // top-n truncation when sampling
  std::size_t max_steps = 12;
  DecodeMode mode = DecodeMode::kTopN;
  std::uint64_t rng_seed = 0;

  void validate(std::size_t vocab_size) const;
};

struct Hypothesis {
  TokenSequence tokens;  // ends with EOS iff finished
  double log_prob = 0.0;  // sum of the model's stepwise log-probs of `tokens`
  bool finished = false;

  // Tokens without the terminating EOS.
  TokenSequence content() const;
};

// Argmax each step (ties to the lowest id) until EOS or max_steps.
template <typename T>
Hypothesis greedy_decode(const ModelParameters<T>& params, std::span<const TokenId> x,
                         const DecodeConfig& cfg);

// Length-unnormalized beam search. Finished hypotheses retire into a pool;
// returns the best k of the pool (live beams join it at max_steps).
template <typename T>
std::vector<Hypothesis> beam_search(const ModelParameters<T>& params, std::span<const TokenId> x,
                                    const DecodeConfig& cfg);

// Diversity-forcing sampler: hypothesis i starts with the i-th most likely
// first token; later tokens are drawn from the renormalized top-n
// distribution using a per-hypothesis stream seeded from (rng_seed, i).
// Throws Error when fewer than k first tokens have nonzero probability.
template <typename T>
std::vector<Hypothesis> top_n_sample(const ModelParameters<T>& params, std::span<const TokenId> x,
                                     const DecodeConfig& cfg);
template <typename T>
std::vector<Hypothesis> top_n_sample(const ModelParameters<T>& params, const EncoderState<T>& enc,
                                     const DecodeConfig& cfg);

// Dispatches on cfg.mode; greedy yields a single hypothesis.
template <typename T>
std::vector<Hypothesis> decode(const ModelParameters<T>& params, std::span<const TokenId> x,
                               const DecodeConfig& cfg);

}  // namespace qrw
