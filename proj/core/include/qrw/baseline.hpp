#pragma once

#include <string>
#include <utility>
#include <vector>

namespace qrw {

// Phrase -> synonym phrases, in first-seen order. Phrases are case-folded
// token lists.
class SynonymDictionary {
 public:
  struct Entry {
    std::vector<std::string> phrase;
    std::vector<std::vector<std::string>> synonyms;
  };

  // Throws Error for an empty phrase or a phrase mapped to itself.
  // Duplicate (phrase, synonym) pairs are ignored.
  void add(const std::string& phrase, const std::string& synonym);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
};

// TSV `phrase<TAB>synonym`; malformed rows raise ParseError.
SynonymDictionary load_dictionary(const std::string& path);
void write_dictionary(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& rows);

// One rewrite per (matched phrase, synonym), replacing the leftmost
// occurrence only. Ordered by match position, then dictionary order.
std::vector<std::string> rewrite_rule_based(const std::string& query, const SynonymDictionary& dict);

}  // namespace qrw
