#include "qrw/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "qrw/error.hpp"

namespace qrw {
namespace {

const char* const kSpecialNames[kNumSpecials] = {"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  id_to_token_.reserve(tokens.size() + kNumSpecials);
  for (const char* name : kSpecialNames) id_to_token_.emplace_back(name);
  for (const auto& t : tokens) {
    if (t.empty()) throw Error("vocabulary: empty token");
    auto [it, inserted] = token_to_id_.emplace(t, static_cast<TokenId>(id_to_token_.size()));
    if (!inserted) throw Error("vocabulary: duplicate token '" + t + "'");
    id_to_token_.push_back(t);
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw Error("corrupt sequence: token id " + std::to_string(id) +
                " outside vocabulary of size " + std::to_string(id_to_token_.size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : regular_tokens()) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x0a;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& t : regular_tokens()) out << t << '\n';
  if (!out) throw Error("write failed: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open vocabulary: " + path);
  std::vector<std::string> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.find_first_of(" \t") != std::string::npos) {
      throw ParseError(path, lineno, "vocabulary line must hold exactly one token");
    }
    tokens.push_back(line);
  }
  try {
    return Vocabulary(tokens);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t max_size,
                       std::size_t min_freq) {
  if (max_size < kNumSpecials) throw Error("build_vocab: max_size must be >= 4");
  if (min_freq < 1) throw Error("build_vocab: min_freq must be >= 1");
  std::map<std::string, std::size_t> freq;
  for (const auto& line : corpus) {
    for (auto& t : tokenize(line)) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq) ranked.emplace_back(tok, n);
  }
  // std::map iteration is already lexicographic, so a stable sort on count keeps ties ordered.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t room = max_size - kNumSpecials;
  if (ranked.size() > room) ranked.resize(room);
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return Vocabulary(tokens);
}

TokenSequence encode(std::string_view text, const Vocabulary& vocab) {
  TokenSequence out;
  for (const auto& t : tokenize(text)) out.push_back(vocab.id(t));
  return out;
}

std::string decode_text(std::span<const TokenId> seq, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(seq[i]);
  }
  return out;
}

bool has_control_token(std::span<const TokenId> seq) {
  return std::any_of(seq.begin(), seq.end(), [](TokenId t) { return t == kPad || t == kBos; });
}

}  // namespace qrw
