#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qrw/text.hpp"

namespace qrw {

struct ClickPair {
  TokenSequence query;
  TokenSequence title;
  std::int64_t clicks = 0;
};

// Query/title click pairs after ingestion filtering (clicks > 1).
struct ClickLogDataset {
  std::vector<ClickPair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

// One row of the TSV click log, before encoding.
struct ClickRow {
  std::string query;
  std::string title;
  std::int64_t clicks = 0;
};

// Reads `query<TAB>title<TAB>clicks`. Throws ParseError with the line number
// on a wrong column count or a non-numeric click count.
std::vector<ClickRow> read_click_rows(const std::string& path);
void write_click_rows(const std::string& path, const std::vector<ClickRow>& rows);

// Drops rows with clicks <= 1 (accidental clicks) and encodes the rest.
// Rows whose query or title encodes to nothing are dropped as well.
ClickLogDataset make_dataset(const std::vector<ClickRow>& rows, const Vocabulary& vocab);
ClickLogDataset load_click_log(const std::string& path, const Vocabulary& vocab);

// Parameters of the planted-synonym world. Each concept has
// `surfaces_per_concept` synonymous query surfaces ("<variant> <head>"),
// `title_tokens_per_concept` canonical title tokens and shares a pool of
// attribute tokens (title suffix) and modifier tokens (optional query suffix).
struct SynonymWorldSpec {
  std::size_t concepts = 30;
  std::size_t surfaces_per_concept = 3;
  std::size_t title_tokens_per_concept = 3;
  std::size_t modifier_vocab = 6;
  std::size_t pairs_to_emit = 2000;
  std::uint64_t seed = 7;
  // Not part of the concept structure; tune the noise of the world.
  std::size_t attribute_vocab = 6;
  double modifier_prob = 0.5;
  double noise_fraction = 0.1;  // extra single-click rows with a random title
  bool shuffle_title_tokens = true;  // titles list their concept tokens in random order
  // Real clicks that land on the titles of a paired neighbor concept (c xor 1).
  double confusion_prob = 0.0;
};

struct SyntheticWorld {
  // Every emitted row, including single-click noise rows.
  std::vector<ClickRow> rows;
  // concept id -> all query surfaces of that concept. Evaluation only.
  std::map<std::size_t, std::vector<std::string>> ground_truth;
  // Concept of every row in `rows`.
  std::vector<std::size_t> row_concept;
  // Vocabulary covering every generator token.
  Vocabulary vocab;
  // Rows that survive the click filter, encoded against `vocab`.
  ClickLogDataset dataset;
};

SyntheticWorld generate_synthetic(const SynonymWorldSpec& spec);

// Ground truth TSV `concept_id<TAB>surface`.
void write_ground_truth(const std::string& path,
                        const std::map<std::size_t, std::vector<std::string>>& truth);
std::map<std::size_t, std::vector<std::string>> read_ground_truth(const std::string& path);

// Phrase dictionary mapping each surface to every other surface of its
// concept, as `phrase<TAB>synonym` rows.
std::vector<std::pair<std::string, std::string>> synonym_rows(
    const std::map<std::size_t, std::vector<std::string>>& truth);

struct QueryPair {
  TokenSequence source;
  TokenSequence target;
  std::int64_t shared_clicks = 0;
};

// Two queries share clicks on every title both clicked; their score is the
// sum of both queries' clicks on those titles. Pairs at or above the
// threshold are emitted in both directions, ordered by (source, target).
std::vector<QueryPair> extract_query_pairs(const ClickLogDataset& dataset,
                                           std::int64_t min_shared_clicks);

// Padded rows of (source, target). Source and target matrices are
// row-major `size() x width` with PAD filling; masks are 1 on real tokens.
struct Batch {
  std::vector<std::size_t> indices;
  std::size_t source_width = 0;
  std::size_t target_width = 0;
  std::vector<TokenId> source;
  std::vector<TokenId> target;
  std::vector<std::uint8_t> source_mask;
  std::vector<std::uint8_t> target_mask;

  std::size_t size() const { return indices.size(); }
  TokenSequence source_row(std::size_t i) const;  // padded
  TokenSequence target_row(std::size_t i) const;  // padded
};

Batch make_batch(const ClickLogDataset& dataset, const std::vector<std::size_t>& indices);

// Seeded epoch-wise batching. Epoch e visits a permutation of the dataset
// derived from (shuffle_seed, e); the last batch of an epoch may be short.
class BatchSampler {
 public:
  BatchSampler(const ClickLogDataset& dataset, std::size_t batch_size, std::uint64_t shuffle_seed);

  std::size_t batches_per_epoch() const;
  std::vector<Batch> epoch(std::size_t e) const;
  // Batch consumed at global step `step` (0-based), walking epochs in order.
  Batch at_step(std::size_t step) const;

 private:
  std::vector<std::size_t> permutation(std::size_t e) const;

  const ClickLogDataset* dataset_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

}  // namespace qrw
