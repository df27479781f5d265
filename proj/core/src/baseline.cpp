#include "qrw/baseline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <tuple>

#include "qrw/error.hpp"
#include "qrw/text.hpp"

namespace qrw {

void SynonymDictionary::add(const std::string& phrase, const std::string& synonym) {
  auto p = tokenize(phrase);
  auto s = tokenize(synonym);
  if (p.empty() || s.empty()) throw Error("synonym dictionary: empty phrase");
  if (p == s) throw Error("synonym dictionary: phrase '" + phrase + "' maps to itself");
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.phrase == p; });
  if (it == entries_.end()) {
    entries_.push_back({std::move(p), {std::move(s)}});
    return;
  }
  if (std::find(it->synonyms.begin(), it->synonyms.end(), s) == it->synonyms.end()) {
    it->synonyms.push_back(std::move(s));
  }
}

SynonymDictionary load_dictionary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dictionary: " + path);
  SynonymDictionary dict;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(path, lineno, "expected phrase<TAB>synonym");
    }
    try {
      dict.add(line.substr(0, tab), line.substr(tab + 1));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(path, lineno, e.what());
    }
  }
  return dict;
}

void write_dictionary(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& [p, s] : rows) out << p << '\t' << s << '\n';
  if (!out) throw Error("write failed: " + path);
}

std::vector<std::string> rewrite_rule_based(const std::string& query, const SynonymDictionary& dict) {
  const auto q = tokenize(query);
  // (position, entry order, synonym order)
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> matches;
  for (std::size_t e = 0; e < dict.entries().size(); ++e) {
    const auto& phrase = dict.entries()[e].phrase;
    const auto it = std::search(q.begin(), q.end(), phrase.begin(), phrase.end());
    if (it == q.end()) continue;
    for (std::size_t s = 0; s < dict.entries()[e].synonyms.size(); ++s) {
      matches.emplace_back(static_cast<std::size_t>(it - q.begin()), e, s);
    }
  }
  std::sort(matches.begin(), matches.end());
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& [pos, e, s] : matches) {
    const auto& entry = dict.entries()[e];
    std::vector<std::string> r(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(pos));
    r.insert(r.end(), entry.synonyms[s].begin(), entry.synonyms[s].end());
    r.insert(r.end(), q.begin() + static_cast<std::ptrdiff_t>(pos + entry.phrase.size()), q.end());
    std::string text;
    for (const auto& t : r) {
      if (!text.empty()) text += ' ';
      text += t;
    }
    if (seen.insert(text).second) out.push_back(std::move(text));
  }
  return out;
}

}  // namespace qrw
