#include "qrw/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <tuple>

#include "qrw/error.hpp"
#include "qrw/rng.hpp"

namespace qrw {
namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string variant_token(std::size_t c, std::size_t i) {
  return "v" + std::to_string(c) + "_" + std::to_string(i);
}
std::string head_token(std::size_t c) { return "n" + std::to_string(c); }
std::string title_token(std::size_t c, std::size_t j) {
  return "t" + std::to_string(c) + "_" + std::to_string(j);
}

}  // namespace

std::vector<ClickRow> read_click_rows(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open click log: " + path);
  std::vector<ClickRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 3) {
      throw ParseError(path, lineno, "expected 3 tab-separated columns, got " +
                                         std::to_string(cols.size()));
    }
    ClickRow row{std::string(cols[0]), std::string(cols[1]), 0};
    if (!parse_int(cols[2], row.clicks)) {
      throw ParseError(path, lineno, "non-numeric clicks '" + std::string(cols[2]) + "'");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_click_rows(const std::string& path, const std::vector<ClickRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& r : rows) out << r.query << '\t' << r.title << '\t' << r.clicks << '\n';
  if (!out) throw Error("write failed: " + path);
}

ClickLogDataset make_dataset(const std::vector<ClickRow>& rows, const Vocabulary& vocab) {
  ClickLogDataset ds;
  for (const auto& r : rows) {
    if (r.clicks <= 1) continue;
    ClickPair p{encode(r.query, vocab), encode(r.title, vocab), r.clicks};
    if (p.query.empty() || p.title.empty()) continue;
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

ClickLogDataset load_click_log(const std::string& path, const Vocabulary& vocab) {
  return make_dataset(read_click_rows(path), vocab);
}

SyntheticWorld generate_synthetic(const SynonymWorldSpec& spec) {
  if (spec.concepts < 1 || spec.surfaces_per_concept < 1 || spec.title_tokens_per_concept < 1 ||
      spec.modifier_vocab < 1 || spec.pairs_to_emit < 1 || spec.attribute_vocab < 1) {
    throw Error("generate_synthetic: all counts must be >= 1");
  }
  Rng rng(stream_seed(spec.seed, {0x5157}));
  SyntheticWorld world;

  auto make_query = [&](std::size_t c) {
    std::string q = variant_token(c, uniform_index(rng, spec.surfaces_per_concept)) + " " +
                    head_token(c);
    if (uniform01(rng) < spec.modifier_prob) {
      q += " m" + std::to_string(uniform_index(rng, spec.modifier_vocab));
    }
    return q;
  };
  auto make_title = [&](std::size_t c) {
    std::vector<std::size_t> order(spec.title_tokens_per_concept);
    std::iota(order.begin(), order.end(), 0);
    if (spec.shuffle_title_tokens) {
      for (std::size_t j = order.size(); j > 1; --j) std::swap(order[j - 1], order[uniform_index(rng, j)]);
    }
    std::string t;
    for (std::size_t j = 0; j < order.size(); ++j) {
      if (j) t.push_back(' ');
      t += title_token(c, order[j]);
    }
    t += " a" + std::to_string(uniform_index(rng, spec.attribute_vocab));
    return t;
  };

  const auto noise = static_cast<std::size_t>(spec.noise_fraction *
                                              static_cast<double>(spec.pairs_to_emit));
  const std::size_t total = spec.pairs_to_emit + noise;
  // Noise rows are interleaved at a fixed stride so the file looks like a log.
  const std::size_t stride = noise ? total / noise : 0;
  std::size_t emitted_noise = 0;
  for (std::size_t r = 0; r < total; ++r) {
    const std::size_t c = uniform_index(rng, spec.concepts);
    const bool is_noise = noise && emitted_noise < noise && (r + 1) % stride == 0;
    std::string q = make_query(c);
    if (is_noise) {
      const std::size_t other = uniform_index(rng, spec.concepts);
      world.rows.push_back({std::move(q), make_title(other), 1});
      ++emitted_noise;
    } else {
      std::size_t shown = c;
      if (spec.confusion_prob > 0.0 && uniform01(rng) < spec.confusion_prob) {
        shown = (c ^ 1) < spec.concepts ? (c ^ 1) : c;
      }
      world.rows.push_back({std::move(q), make_title(shown),
                            2 + static_cast<std::int64_t>(uniform_index(rng, 5))});
    }
    world.row_concept.push_back(c);
  }

  for (std::size_t c = 0; c < spec.concepts; ++c) {
    auto& surfaces = world.ground_truth[c];
    for (std::size_t i = 0; i < spec.surfaces_per_concept; ++i) {
      surfaces.push_back(variant_token(c, i) + " " + head_token(c));
    }
  }

  std::vector<std::string> corpus;
  corpus.reserve(world.rows.size() * 2 + world.ground_truth.size());
  for (const auto& r : world.rows) {
    corpus.push_back(r.query);
    corpus.push_back(r.title);
  }
  for (const auto& [c, surfaces] : world.ground_truth) {
    for (const auto& s : surfaces) corpus.push_back(s);
  }
  world.vocab = build_vocab(corpus, SIZE_MAX, 1);
  world.dataset = make_dataset(world.rows, world.vocab);
  return world;
}

void write_ground_truth(const std::string& path,
                        const std::map<std::size_t, std::vector<std::string>>& truth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& [c, surfaces] : truth) {
    for (const auto& s : surfaces) out << c << '\t' << s << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

std::map<std::size_t, std::vector<std::string>> read_ground_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open ground truth: " + path);
  std::map<std::size_t, std::vector<std::string>> truth;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    std::size_t c = 0;
    if (cols.size() != 2 || !parse_int(cols[0], c) || cols[1].empty()) {
      throw ParseError(path, lineno, "expected concept_id<TAB>surface");
    }
    truth[c].emplace_back(cols[1]);
  }
  return truth;
}

std::vector<std::pair<std::string, std::string>> synonym_rows(
    const std::map<std::size_t, std::vector<std::string>>& truth) {
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& [c, surfaces] : truth) {
    for (const auto& a : surfaces) {
      for (const auto& b : surfaces) {
        if (a != b) rows.emplace_back(a, b);
      }
    }
  }
  return rows;
}

std::vector<QueryPair> extract_query_pairs(const ClickLogDataset& dataset,
                                           std::int64_t min_shared_clicks) {
  if (min_shared_clicks < 1) throw Error("extract_query_pairs: threshold must be >= 1");
  // title -> query -> clicks
  std::map<TokenSequence, std::map<TokenSequence, std::int64_t>> by_title;
  for (const auto& p : dataset.pairs) by_title[p.title][p.query] += p.clicks;

  std::map<std::pair<TokenSequence, TokenSequence>, std::int64_t> shared;
  for (const auto& [title, queries] : by_title) {
    for (auto a = queries.begin(); a != queries.end(); ++a) {
      for (auto b = std::next(a); b != queries.end(); ++b) {
        shared[{a->first, b->first}] += a->second + b->second;
      }
    }
  }
  std::vector<QueryPair> out;
  for (const auto& [key, score] : shared) {
    if (score < min_shared_clicks) continue;
    out.push_back({key.first, key.second, score});
    out.push_back({key.second, key.first, score});
  }
  std::sort(out.begin(), out.end(), [](const QueryPair& a, const QueryPair& b) {
    return std::tie(a.source, a.target) < std::tie(b.source, b.target);
  });
  return out;
}

TokenSequence Batch::source_row(std::size_t i) const {
  auto first = source.begin() + static_cast<std::ptrdiff_t>(i * source_width);
  return TokenSequence(first, first + static_cast<std::ptrdiff_t>(source_width));
}

TokenSequence Batch::target_row(std::size_t i) const {
  auto first = target.begin() + static_cast<std::ptrdiff_t>(i * target_width);
  return TokenSequence(first, first + static_cast<std::ptrdiff_t>(target_width));
}

Batch make_batch(const ClickLogDataset& dataset, const std::vector<std::size_t>& indices) {
  Batch b;
  b.indices = indices;
  for (auto i : indices) {
    b.source_width = std::max(b.source_width, dataset.pairs.at(i).query.size());
    b.target_width = std::max(b.target_width, dataset.pairs.at(i).title.size());
  }
  b.source.assign(indices.size() * b.source_width, kPad);
  b.target.assign(indices.size() * b.target_width, kPad);
  b.source_mask.assign(b.source.size(), 0);
  b.target_mask.assign(b.target.size(), 0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& p = dataset.pairs[indices[r]];
    for (std::size_t j = 0; j < p.query.size(); ++j) {
      b.source[r * b.source_width + j] = p.query[j];
      b.source_mask[r * b.source_width + j] = 1;
    }
    for (std::size_t j = 0; j < p.title.size(); ++j) {
      b.target[r * b.target_width + j] = p.title[j];
      b.target_mask[r * b.target_width + j] = 1;
    }
  }
  return b;
}

BatchSampler::BatchSampler(const ClickLogDataset& dataset, std::size_t batch_size,
                           std::uint64_t shuffle_seed)
    : dataset_(&dataset), batch_size_(batch_size), seed_(shuffle_seed) {
  if (batch_size_ < 1) throw Error("BatchSampler: batch size must be >= 1");
  if (dataset.empty()) throw Error("BatchSampler: empty dataset");
}

std::size_t BatchSampler::batches_per_epoch() const {
  return (dataset_->size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::size_t> BatchSampler::permutation(std::size_t e) const {
  std::vector<std::size_t> perm(dataset_->size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(stream_seed(seed_, {0xba7c, e}));
  // Fisher-Yates with the portable index draw.
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  }
  return perm;
}

std::vector<Batch> BatchSampler::epoch(std::size_t e) const {
  auto perm = permutation(e);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < perm.size(); start += batch_size_) {
    const std::size_t end = std::min(perm.size(), start + batch_size_);
    out.push_back(make_batch(*dataset_, {perm.begin() + static_cast<std::ptrdiff_t>(start),
                                         perm.begin() + static_cast<std::ptrdiff_t>(end)}));
  }
  return out;
}

Batch BatchSampler::at_step(std::size_t step) const {
  const std::size_t nb = batches_per_epoch();
  auto perm = permutation(step / nb);
  const std::size_t start = (step % nb) * batch_size_;
  const std::size_t end = std::min(perm.size(), start + batch_size_);
  return make_batch(*dataset_, {perm.begin() + static_cast<std::ptrdiff_t>(start),
                                perm.begin() + static_cast<std::ptrdiff_t>(end)});
}

}  // namespace qrw
