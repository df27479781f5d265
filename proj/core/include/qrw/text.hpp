#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qrw {

using TokenId = std::int32_t;
// Vocabulary ids without BOS/EOS; the model layer adds those.
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kNumSpecials = 4;

// Whitespace split with ASCII case folding.
std::vector<std::string> tokenize(std::string_view text);

// Token <-> id bijection. Specials occupy ids 0..3 (PAD, BOS, EOS, UNK).
// Immutable after construction.
class Vocabulary {
 public:
  Vocabulary();
  // `tokens` are the non-special tokens in id order (first one gets id 4).
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return id_to_token_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;  // throws on out-of-range

  // Non-special tokens in id order.
  std::span<const std::string> regular_tokens() const {
    return std::span<const std::string>(id_to_token_).subspan(kNumSpecials);
  }

  // FNV-1a over the token list; checkpoints record it.
  std::uint64_t hash() const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Frequency-ranked vocabulary; ties broken lexicographically. Tokens below
// min_freq are dropped and the total size (specials included) is capped at max_size.
Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t max_size,
                       std::size_t min_freq);

TokenSequence encode(std::string_view text, const Vocabulary& vocab);
std::string decode_text(std::span<const TokenId> seq, const Vocabulary& vocab);

// True when `seq` holds PAD or BOS. Sampled sequences containing them have no
// text form and cannot be scored, so callers drop them.
bool has_control_token(std::span<const TokenId> seq);

}  // namespace qrw
