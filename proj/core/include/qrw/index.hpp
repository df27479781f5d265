#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qrw/text.hpp"

namespace qrw {

using DocId = std::int64_t;

struct Document {
  DocId doc_id = 0;
  TokenSequence tokens;
};

class InvertedIndex {
 public:
  // Postings of `token`, ascending; empty for unseen tokens.
  std::span<const DocId> postings(TokenId token) const;
  const std::map<TokenId, std::vector<DocId>>& all() const { return postings_; }
  std::size_t num_docs() const { return num_docs_; }

 private:
  friend InvertedIndex build_index(std::span<const Document> docs);
  std::map<TokenId, std::vector<DocId>> postings_;
  std::size_t num_docs_ = 0;
};

// Throws Error on a duplicate doc_id.
InvertedIndex build_index(std::span<const Document> docs);

struct SyntaxTree {
  enum class Kind { kToken, kAnd, kOr };

  Kind kind = Kind::kToken;
  TokenId token = 0;
  std::vector<SyntaxTree> children;

  static SyntaxTree leaf(TokenId t) { return {Kind::kToken, t, {}}; }
  bool operator==(const SyntaxTree&) const = default;
};

// And over the distinct tokens in ascending id order; a single token gives
// a bare leaf. Throws Error on an empty query.
SyntaxTree parse_query(std::span<const TokenId> query);

// One tree retrieving exactly the union of the per-query conjunctive
// retrievals: tokens common to every query are factored into the root And and
// the remaining per-query tokens form an Or of groups. A group that is a
// superset of another is dropped, an empty group makes the Or vacuous, and
// groups sharing a token are merged recursively when that does not grow the tree.
SyntaxTree merge_trees(const std::vector<TokenSequence>& queries);

// Sorted, duplicate-free doc ids matched by the tree.
std::vector<DocId> evaluate(const SyntaxTree& tree, const InvertedIndex& index);

std::size_t node_count(const SyntaxTree& tree);

// Compact prefix form, e.g. "&(3 |(4 5))"; leaves print as token strings
// when a vocabulary is given.
std::string to_string(const SyntaxTree& tree, const Vocabulary* vocab = nullptr);

struct CorpusRow {
  DocId doc_id = 0;
  std::string title;
};

// TSV `doc_id<TAB>title`; raises ParseError on malformed rows.
std::vector<CorpusRow> read_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<CorpusRow>& rows);
std::vector<Document> encode_corpus(const std::vector<CorpusRow>& rows, const Vocabulary& vocab);

}  // namespace qrw
