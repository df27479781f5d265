#include "qrw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "qrw/error.hpp"
#include "qrw/train.hpp"

namespace qrw {
namespace {

constexpr std::size_t kEvalBatch = 32;

std::vector<char32_t> code_points(std::string_view s) {
  std::vector<char32_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = c;
    if (c >= 0xf0) {
      len = 4;
      cp = c & 0x07;
    } else if (c >= 0xe0) {
      len = 3;
      cp = c & 0x0f;
    } else if (c >= 0xc0) {
      len = 2;
      cp = c & 0x1f;
    }
    if (i + len > s.size()) len = 1, cp = c;
    for (std::size_t j = 1; j < len; ++j) cp = (cp << 6) | (static_cast<unsigned char>(s[i + j]) & 0x3f);
    out.push_back(cp);
    i += len;
  }
  return out;
}

template <typename Seq>
std::size_t levenshtein(const Seq& a, const Seq& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::set<std::vector<std::string>> ngrams(std::span<const std::string> tokens) {
  std::set<std::vector<std::string>> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.insert({tokens[i]});
    if (i + 1 < tokens.size()) out.insert({tokens[i], tokens[i + 1]});
  }
  return out;
}

bool contains_span(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

template <typename T>
double perplexity(const ClickLogDataset& dataset, const ModelParameters<T>& params, Direction dir) {
  if (dataset.empty()) throw Error("perplexity of an empty dataset");
  double nll = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < dataset.size(); start += kEvalBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(dataset.size(), start + kEvalBatch); ++i) idx.push_back(i);
    Batch batch = make_batch(dataset, idx);
    if (dir == Direction::kBackward) batch = reverse_batch(batch);
    const auto [n, c] = token_nll(params, batch);
    nll += n;
    tokens += c;
  }
  return std::exp(nll / static_cast<double>(tokens));
}

template <typename T>
double translate_back_log_prob(std::span<const TokenSequence> queries, const ModelParameters<T>& fwd,
                               const ModelParameters<T>& bwd, const DecodeConfig& cfg) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& q : queries) {
    const auto term = cyclic_term(std::span<const TokenId>(q), fwd, bwd, cfg);
    if (term.empty()) continue;
    total += term.value;
    ++counted;
  }
  if (counted == 0) throw Error("translate_back_log_prob: no query produced a title");
  return total / static_cast<double>(counted);
}

template <typename T>
double translate_back_accuracy_over(std::span<const TokenId> x, const ModelParameters<T>& fwd,
                                    const ModelParameters<T>& bwd,
                                    const std::vector<TokenSequence>& titles) {
  if (x.empty()) throw Error("translate_back_accuracy: empty query");
  std::vector<TokenSequence> kept;
  std::set<TokenSequence> seen;
  for (const auto& y : titles) {
    if (!y.empty() && !has_control_token(y) && seen.insert(y).second) kept.push_back(y);
  }
  if (kept.empty()) return 0.0;
  std::vector<double> lp, acc;
  for (const auto& y : kept) {
    lp.push_back(static_cast<double>(sequence_log_prob(fwd, x, std::span<const TokenId>(y))));
    const auto dist = teacher_forced_log_probs(bwd, std::span<const TokenId>(y), x);
    std::size_t hits = 0;
    for (std::size_t t = 0; t < x.size(); ++t) {
      const auto row = dist.row(t);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      if (best == x[t]) ++hits;
    }
    acc.push_back(static_cast<double>(hits) / static_cast<double>(x.size()));
  }
  const double m = *std::max_element(lp.begin(), lp.end());
  double z = 0.0, s = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double w = std::exp(lp[i] - m);
    z += w;
    s += w * acc[i];
  }
  return s / z;
}

template <typename T>
double translate_back_accuracy(std::span<const TokenSequence> queries, const ModelParameters<T>& fwd,
                               const ModelParameters<T>& bwd, const DecodeConfig& cfg) {
  if (queries.empty()) throw Error("translate_back_accuracy: no queries");
  double total = 0.0;
  for (const auto& q : queries) {
    std::vector<TokenSequence> titles;
    for (const auto& h : top_n_sample(fwd, std::span<const TokenId>(q), cfg)) titles.push_back(h.content());
    total += translate_back_accuracy_over(std::span<const TokenId>(q), fwd, bwd, titles);
  }
  return total / static_cast<double>(queries.size());
}

double ngram_f1(std::span<const std::string> original, std::span<const std::string> rewritten) {
  const auto a = ngrams(original);
  const auto b = ngrams(rewritten);
  if (a.empty() || b.empty()) return 0.0;
  std::size_t overlap = 0;
  for (const auto& g : b) overlap += a.count(g);
  const double p = static_cast<double>(overlap) / static_cast<double>(b.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(a.size());
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double ngram_f1(std::string_view original, std::string_view rewritten) {
  const auto a = tokenize(original);
  const auto b = tokenize(rewritten);
  return ngram_f1(std::span<const std::string>(a), std::span<const std::string>(b));
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  return levenshtein(code_points(a), code_points(b));
}

std::size_t token_edit_distance(std::string_view a, std::string_view b) {
  return levenshtein(tokenize(a), tokenize(b));
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error("cosine: degenerate zero embedding");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

template <typename T>
std::vector<double> pooled_embedding(std::span<const TokenId> x, const ModelParameters<T>& fwd) {
  const auto enc = encode_source(fwd, x);
  std::vector<double> out(enc.context.cols, 0.0);
  std::size_t count = 0;
  for (std::size_t r = 0; r < enc.context.rows; ++r) {
    if (!enc.mask[r]) continue;
    ++count;
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += static_cast<double>(enc.context(r, c));
  }
  for (auto& v : out) v /= static_cast<double>(count);
  return out;
}

template <typename T>
double cosine_similarity(std::span<const TokenId> a, std::span<const TokenId> b,
                         const ModelParameters<T>& fwd) {
  const auto ea = pooled_embedding(a, fwd);
  const auto eb = pooled_embedding(b, fwd);
  return cosine(ea, eb);
}

double synonym_recall_at_m(const std::vector<QueryRewrites>& rewrites,
                           const std::map<std::size_t, std::vector<std::string>>& truth,
                           std::size_t m) {
  if (rewrites.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& qr : rewrites) {
    const auto q = tokenize(qr.query);
    const std::vector<std::string>* surfaces = nullptr;
    for (const auto& [concept_id, s] : truth) {
      for (const auto& surface : s) {
        if (contains_span(q, tokenize(surface))) {
          surfaces = &s;
          break;
        }
      }
      if (surfaces) break;
    }
    if (!surfaces) throw Error("synonym_recall: query '" + qr.query + "' has no ground-truth concept");
    std::vector<std::vector<std::string>> others;
    for (const auto& surface : *surfaces) {
      auto toks = tokenize(surface);
      if (!contains_span(q, toks)) others.push_back(std::move(toks));
    }
    bool hit = false;
    for (std::size_t i = 0; i < std::min(m, qr.rewrites.size()) && !hit; ++i) {
      const auto r = tokenize(qr.rewrites[i]);
      for (const auto& o : others) {
        if (contains_span(r, o)) {
          hit = true;
          break;
        }
      }
    }
    if (hit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rewrites.size());
}

void EvalReport::set(const std::string& metric, double value) {
  for (auto& [k, v] : aggregates) {
    if (k == metric) {
      v = value;
      return;
    }
  }
  aggregates.emplace_back(metric, value);
}

std::optional<double> EvalReport::get(const std::string& metric) const {
  for (const auto& [k, v] : aggregates) {
    if (k == metric) return v;
  }
  return std::nullopt;
}

void EvalReport::write_tsv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  char buf[64];
  for (const auto& [k, v] : aggregates) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out << k << '\t' << buf << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

void EvalReport::write_pairs_jsonl(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["system"] = p.system;
    j["original"] = p.original;
    j["rewrite"] = p.rewrite;
    j["f1"] = p.f1;
    j["edit_distance"] = p.edit_distance;
    j["cosine"] = p.cosine;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

template <typename T>
std::array<double, 3> score_rewrites(const std::vector<QueryRewrites>& rewrites,
                                     const std::string& system, const Vocabulary& vocab,
                                     const ModelParameters<T>& fwd, EvalReport& report) {
  std::array<double, 3> sums{0.0, 0.0, 0.0};
  std::size_t count = 0;
  for (const auto& qr : rewrites) {
    const auto q = encode(qr.query, vocab);
    for (const auto& r : qr.rewrites) {
      PairMetrics pm;
      pm.original = qr.query;
      pm.rewrite = r;
      pm.system = system;
      pm.f1 = ngram_f1(qr.query, r);
      pm.edit_distance = static_cast<double>(edit_distance(qr.query, r));
      const auto e = encode(r, vocab);
      pm.cosine = cosine_similarity(std::span<const TokenId>(q), std::span<const TokenId>(e), fwd);
      sums[0] += pm.f1;
      sums[1] += pm.edit_distance;
      sums[2] += pm.cosine;
      ++count;
      report.pairs.push_back(std::move(pm));
    }
  }
  if (count) {
    for (auto& s : sums) s /= static_cast<double>(count);
  }
  return sums;
}

#define QRW_INSTANTIATE_METRICS(T)                                                                 \
  template double perplexity<T>(const ClickLogDataset&, const ModelParameters<T>&, Direction);     \
  template double translate_back_log_prob<T>(std::span<const TokenSequence>,                       \
                                             const ModelParameters<T>&, const ModelParameters<T>&, \
                                             const DecodeConfig&);                                 \
  template double translate_back_accuracy<T>(std::span<const TokenSequence>,                       \
                                             const ModelParameters<T>&, const ModelParameters<T>&, \
                                             const DecodeConfig&);                                 \
  template double translate_back_accuracy_over<T>(std::span<const TokenId>,                        \
                                                  const ModelParameters<T>&,                       \
                                                  const ModelParameters<T>&,                       \
                                                  const std::vector<TokenSequence>&);              \
  template std::vector<double> pooled_embedding<T>(std::span<const TokenId>,                       \
                                                   const ModelParameters<T>&);                     \
  template double cosine_similarity<T>(std::span<const TokenId>, std::span<const TokenId>,         \
                                       const ModelParameters<T>&);                                 \
  template std::array<double, 3> score_rewrites<T>(const std::vector<QueryRewrites>&,              \
                                                   const std::string&, const Vocabulary&,          \
                                                   const ModelParameters<T>&, EvalReport&);

QRW_INSTANTIATE_METRICS(float)
QRW_INSTANTIATE_METRICS(double)

}  // namespace qrw
