#include "qrw/index.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <unordered_set>

#include "qrw/error.hpp"

namespace qrw {
namespace {

std::vector<DocId> intersect(const std::vector<DocId>& a, const std::vector<DocId>& b) {
  std::vector<DocId> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

SyntaxTree conjunction(const std::vector<TokenId>& tokens) {
  if (tokens.size() == 1) return SyntaxTree::leaf(tokens[0]);
  SyntaxTree t{SyntaxTree::Kind::kAnd, 0, {}};
  for (auto id : tokens) t.children.push_back(SyntaxTree::leaf(id));
  return t;
}

using TokenSet = std::set<TokenId>;

SyntaxTree merge_sets(std::vector<TokenSet> sets);

// Or over groups that share no token with each other's factor; each group of
// residues sharing the most frequent token is merged recursively.
SyntaxTree disjunction(std::vector<TokenSet> residues) {
  SyntaxTree alt{SyntaxTree::Kind::kOr, 0, {}};
  while (!residues.empty()) {
    std::map<TokenId, std::size_t> freq;
    for (const auto& r : residues) {
      for (auto t : r) ++freq[t];
    }
    TokenId best = 0;
    std::size_t best_count = 0;
    for (const auto& [t, c] : freq) {
      if (c > best_count) {
        best = t;
        best_count = c;
      }
    }
    if (best_count < 2) {
      for (const auto& r : residues) alt.children.push_back(conjunction(std::vector<TokenId>(r.begin(), r.end())));
      break;
    }
    std::vector<TokenSet> group, rest;
    for (auto& r : residues) (r.count(best) ? group : rest).push_back(std::move(r));
    // Factoring a group adds an And and an Or; keep it only when the shared
    // tokens pay for them.
    std::vector<SyntaxTree> plain;
    std::size_t plain_nodes = 0;
    for (const auto& r : group) {
      plain.push_back(conjunction(std::vector<TokenId>(r.begin(), r.end())));
      plain_nodes += node_count(plain.back());
    }
    SyntaxTree factored = merge_sets(std::move(group));
    if (node_count(factored) <= plain_nodes) {
      alt.children.push_back(std::move(factored));
    } else {
      for (auto& p : plain) alt.children.push_back(std::move(p));
    }
    residues = std::move(rest);
  }
  return alt;
}

SyntaxTree merge_sets(std::vector<TokenSet> sets) {
  TokenSet common = sets[0];
  for (const auto& s : sets) {
    TokenSet next;
    std::set_intersection(common.begin(), common.end(), s.begin(), s.end(), std::inserter(next, next.end()));
    common = std::move(next);
  }
  std::vector<TokenSet> residues;
  for (const auto& s : sets) {
    TokenSet r;
    std::set_difference(s.begin(), s.end(), common.begin(), common.end(), std::inserter(r, r.end()));
    if (r.empty()) return conjunction(std::vector<TokenId>(common.begin(), common.end()));
    if (std::find(residues.begin(), residues.end(), r) == residues.end()) residues.push_back(std::move(r));
  }

  std::vector<TokenSet> kept;
  for (std::size_t i = 0; i < residues.size(); ++i) {
    bool absorbed = false;
    for (std::size_t j = 0; j < residues.size() && !absorbed; ++j) {
      absorbed = i != j && residues[j].size() < residues[i].size() &&
                 std::includes(residues[i].begin(), residues[i].end(), residues[j].begin(), residues[j].end());
    }
    if (!absorbed) kept.push_back(residues[i]);
  }

  std::vector<TokenId> root(common.begin(), common.end());
  if (kept.size() == 1) {
    root.insert(root.end(), kept[0].begin(), kept[0].end());
    std::sort(root.begin(), root.end());
    return conjunction(root);
  }
  SyntaxTree alt = disjunction(std::move(kept));
  if (root.empty()) return alt;
  SyntaxTree tree = conjunction(root);
  if (tree.kind == SyntaxTree::Kind::kToken) tree = SyntaxTree{SyntaxTree::Kind::kAnd, 0, {tree}};
  tree.children.push_back(std::move(alt));
  return tree;
}

}  // namespace

std::span<const DocId> InvertedIndex::postings(TokenId token) const {
  const auto it = postings_.find(token);
  if (it == postings_.end()) return {};
  return it->second;
}

InvertedIndex build_index(std::span<const Document> docs) {
  InvertedIndex index;
  std::unordered_set<DocId> ids;
  for (const auto& d : docs) {
    if (!ids.insert(d.doc_id).second) throw Error("duplicate doc_id " + std::to_string(d.doc_id));
    for (auto t : d.tokens) index.postings_[t].push_back(d.doc_id);
  }
  for (auto& [t, list] : index.postings_) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  index.num_docs_ = docs.size();
  return index;
}

SyntaxTree parse_query(std::span<const TokenId> query) {
  if (query.empty()) throw Error("parse_query: empty query");
  const std::set<TokenId> distinct(query.begin(), query.end());
  return conjunction(std::vector<TokenId>(distinct.begin(), distinct.end()));
}

SyntaxTree merge_trees(const std::vector<TokenSequence>& queries) {
  if (queries.empty()) throw Error("merge_trees: no queries");
  std::vector<TokenSet> sets;
  for (const auto& q : queries) {
    if (q.empty()) throw Error("merge_trees: empty query");
    sets.emplace_back(q.begin(), q.end());
  }
  return merge_sets(sets);
}

std::vector<DocId> evaluate(const SyntaxTree& tree, const InvertedIndex& index) {
  switch (tree.kind) {
    case SyntaxTree::Kind::kToken: {
      const auto p = index.postings(tree.token);
      return {p.begin(), p.end()};
    }
    case SyntaxTree::Kind::kAnd: {
      std::vector<std::vector<DocId>> lists;
      for (const auto& c : tree.children) lists.push_back(evaluate(c, index));
      if (lists.empty()) return {};
      std::sort(lists.begin(), lists.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
      auto acc = std::move(lists[0]);
      for (std::size_t i = 1; i < lists.size() && !acc.empty(); ++i) acc = intersect(acc, lists[i]);
      return acc;
    }
    case SyntaxTree::Kind::kOr: {
      std::vector<DocId> acc;
      for (const auto& c : tree.children) {
        const auto list = evaluate(c, index);
        std::vector<DocId> merged;
        merged.reserve(acc.size() + list.size());
        std::set_union(acc.begin(), acc.end(), list.begin(), list.end(), std::back_inserter(merged));
        acc = std::move(merged);
      }
      return acc;
    }
  }
  return {};
}

std::size_t node_count(const SyntaxTree& tree) {
  std::size_t n = 1;
  for (const auto& c : tree.children) n += node_count(c);
  return n;
}

std::string to_string(const SyntaxTree& tree, const Vocabulary* vocab) {
  if (tree.kind == SyntaxTree::Kind::kToken) {
    return vocab ? vocab->token(tree.token) : std::to_string(tree.token);
  }
  std::string out = tree.kind == SyntaxTree::Kind::kAnd ? "&(" : "|(";
  for (std::size_t i = 0; i < tree.children.size(); ++i) {
    if (i) out += ' ';
    out += to_string(tree.children[i], vocab);
  }
  return out + ")";
}

std::vector<CorpusRow> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus: " + path);
  std::vector<CorpusRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(path, lineno, "expected doc_id<TAB>title");
    }
    CorpusRow row;
    const char* b = line.data();
    const auto [ptr, ec] = std::from_chars(b, b + tab, row.doc_id);
    if (ec != std::errc() || ptr != b + tab) throw ParseError(path, lineno, "non-numeric doc_id");
    row.title = line.substr(tab + 1);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_corpus(const std::string& path, const std::vector<CorpusRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& r : rows) out << r.doc_id << '\t' << r.title << '\n';
  if (!out) throw Error("write failed: " + path);
}

std::vector<Document> encode_corpus(const std::vector<CorpusRow>& rows, const Vocabulary& vocab) {
  std::vector<Document> docs;
  docs.reserve(rows.size());
  for (const auto& r : rows) docs.push_back({r.doc_id, encode(r.title, vocab)});
  return docs;
}

}  // namespace qrw
