#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "qrw/error.hpp"
#include "qrw/rewrite.hpp"
#include "toy.hpp"

namespace qrw {
namespace {

using testing::tiny_config;
using testing::toy_model;

TEST(LogSumExp, StableAndExact) {
  const std::vector<double> v{-1.0, -2.0, -3.0};
  EXPECT_NEAR(log_sum_exp(v), testing::naive_log_sum_exp(v), 1e-14);
  const std::vector<double> big{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(big), 1000.0 + std::log(2.0), 1e-12);
  const std::vector<double> tiny{-1000.0, -1000.0 - std::log(3.0)};
  EXPECT_NEAR(log_sum_exp(tiny), -1000.0 + std::log(4.0 / 3.0), 1e-12);
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> neg{-inf, -inf};
  EXPECT_EQ(log_sum_exp(neg), -inf);
  EXPECT_THROW(log_sum_exp(std::vector<double>{}), Error);
}

TEST(ScoreCandidate, MatchesBruteForceMarginal) {
  const auto cfg = tiny_config(8);
  const auto fwd = toy_model<double>(cfg, 1);
  const auto bwd = toy_model<double>(cfg, 2, false, ModelRole::kBackward);
  const TokenSequence x{4, 5};
  std::vector<ScoredTitle> titles;
  for (const auto& y : std::vector<TokenSequence>{{6}, {7, 4}, {5, 5, 6}}) {
    titles.push_back({y, sequence_log_prob(fwd, std::span<const TokenId>(x), std::span<const TokenId>(y))});
  }
  const TokenSequence cand{7};
  long double total = 0.0L;
  for (const auto& t : titles) {
    total += std::exp(static_cast<long double>(t.log_prob) +
                      sequence_log_prob(bwd, std::span<const TokenId>(t.title), std::span<const TokenId>(cand)));
  }
  EXPECT_NEAR(score_candidate<double>(cand, titles, bwd), static_cast<double>(std::log(total)), 1e-12);
  EXPECT_THROW(score_candidate<double>(cand, std::span<const ScoredTitle>(), bwd), Error);
}

RewriteConfig small_rewrite(std::uint64_t seed) {
  RewriteConfig c;
  c.k = 3;
  c.n = 4;
  c.max_title_len = 4;
  c.max_query_len = 4;
  c.top_out = 9;
  c.rng_seed = seed;
  return c;
}

TEST(Rewrite, CandidatesAreDistinctSortedAndScored) {
  const auto cfg = tiny_config(9, 8, 2, 16, 6);
  const auto fwd = toy_model<double>(cfg, 3, true);
  const auto bwd = toy_model<double>(cfg, 4, true, ModelRole::kBackward);
  const TokenSequence x{4, 6};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto rc = small_rewrite(seed);
    const auto out = rewrite<double>(x, fwd, bwd, rc);
    ASSERT_FALSE(out.empty());
    std::set<TokenSequence> seen;
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_FALSE(out[i].query.empty());
      EXPECT_NE(out[i].query, x);
      EXPECT_TRUE(seen.insert(out[i].query).second);
      if (i) {
        EXPECT_GE(out[i - 1].log_prob, out[i].log_prob);
      }
      std::vector<double> terms;
      for (const auto& c : out[i].provenance) terms.push_back(c.log_prob);
      EXPECT_NEAR(out[i].log_prob, testing::naive_log_sum_exp(terms), 1e-12);
    }
    EXPECT_EQ(rewrite<double>(x, fwd, bwd, rc).front().query, out.front().query);
  }
}

TEST(Rewrite, TopOutAndIdentity) {
  const auto cfg = tiny_config(7, 8, 2, 16, 6);
  const auto fwd = toy_model<double>(cfg, 5, true);
  const auto bwd = toy_model<double>(cfg, 6, true, ModelRole::kBackward);
  const TokenSequence x{4};
  auto rc = small_rewrite(1);
  rc.max_query_len = 1;
  rc.exclude_identity = false;
  const auto with_identity = rewrite<double>(x, fwd, bwd, rc);
  rc.exclude_identity = true;
  const auto without = rewrite<double>(x, fwd, bwd, rc);
  bool had_identity = false;
  for (const auto& c : with_identity) had_identity |= c.query == x;
  for (const auto& c : without) EXPECT_NE(c.query, x);
  EXPECT_EQ(with_identity.size(), without.size() + (had_identity ? 1 : 0));
  rc.top_out = 1;
  EXPECT_LE(rewrite<double>(x, fwd, bwd, rc).size(), 1u);
  rc.top_out = 10;
  EXPECT_THROW(rewrite<double>(x, fwd, bwd, rc), Error);
  EXPECT_THROW(rewrite<double>(TokenSequence{}, fwd, bwd, small_rewrite(1)), Error);
}

TEST(RewriteDirect, ScoresWithTheQueryModel) {
  const auto cfg = tiny_config(9, 8, 2, 16, 6);
  const auto q2q = toy_model<double>(cfg, 7, true, ModelRole::kQueryToQuery);
  const TokenSequence x{5, 6};
  const auto out = rewrite_direct<double>(x, q2q, small_rewrite(2));
  ASSERT_FALSE(out.empty());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_NEAR(out[i].log_prob,
                sequence_log_prob(q2q, std::span<const TokenId>(x), std::span<const TokenId>(out[i].query)), 1e-12);
    EXPECT_NE(out[i].query, x);
    if (i) {
      EXPECT_GE(out[i - 1].log_prob, out[i].log_prob);
    }
  }
}

}  // namespace
}  // namespace qrw
