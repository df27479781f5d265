#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "qrw/error.hpp"
#include "qrw/model.hpp"
#include "reference_model.hpp"
#include "toy.hpp"

namespace qrw {
namespace {

using testing::tiny_config;
using testing::toy_model;

TEST(ModelConfig, Validation) {
  auto c = tiny_config(10);
  EXPECT_NO_THROW(c.validate());
  c.d_model = 7;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config(4);
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config(10);
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(ModelParameters, LayoutAndInit) {
  const auto p = init_params<float>(tiny_config(10), 1);
  EXPECT_TRUE(p.tensors().contains("enc.0.attn.wq"));
  EXPECT_TRUE(p.tensors().contains("dec.0.cross.wo"));
  EXPECT_EQ(p.tensors().at("out.w").cols, 10u);
  for (float g : p.tensors().at("dec.ln.g").data) EXPECT_EQ(g, 1.0f);
  for (float b : p.tensors().at("out.b").data) EXPECT_EQ(b, 0.0f);
  const auto q = init_params<float>(tiny_config(10), 1);
  EXPECT_EQ(p.tensors().at("src_embed").data, q.tensors().at("src_embed").data);
  const auto r = init_params<float>(tiny_config(10), 2);
  EXPECT_NE(p.tensors().at("src_embed").data, r.tensors().at("src_embed").data);
}

TEST(Forward, MatchesStraightLineReference) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto cfg = tiny_config(9 + trial % 5, 8, 1 + trial % 2 * 3, 12, 8);
    cfg.num_layers = 1 + trial % 2;
    if (cfg.d_model % cfg.num_heads) cfg.num_heads = 2;
    const auto p = toy_model<double>(cfg, 100 + trial);
    const testing::ReferenceModel ref(p);
    TokenSequence x, y;
    for (std::size_t i = 0, n = 1 + uniform_index(rng, 6); i < n; ++i) {
      x.push_back(static_cast<TokenId>(4 + uniform_index(rng, cfg.vocab_size - 4)));
    }
    for (std::size_t i = 0, n = uniform_index(rng, 6); i < n; ++i) {
      y.push_back(static_cast<TokenId>(4 + uniform_index(rng, cfg.vocab_size - 4)));
    }
    EXPECT_NEAR(sequence_log_prob(p, std::span<const TokenId>(x), std::span<const TokenId>(y)),
                ref.sequence_log_prob(x, y), 1e-10);
  }
}

TEST(Forward, FloatTracksDouble) {
  const auto cfg = tiny_config(12);
  const auto pf = toy_model<float>(cfg, 4);
  const testing::ReferenceModel ref(pf);
  const TokenSequence x{4, 7, 9}, y{5, 6};
  EXPECT_NEAR(sequence_log_prob(pf, std::span<const TokenId>(x), std::span<const TokenId>(y)),
              ref.sequence_log_prob(x, y), 1e-4);
}

TEST(Forward, SourcePaddingIsMasked) {
  const auto p = toy_model<double>(tiny_config(10), 5);
  const TokenSequence x{4, 5}, xp{4, 5, kPad, kPad}, y{6, 7};
  EXPECT_NEAR(sequence_log_prob(p, std::span<const TokenId>(x), std::span<const TokenId>(y)),
              sequence_log_prob(p, std::span<const TokenId>(xp), std::span<const TokenId>(y)), 1e-12);
  const TokenSequence yp{6, 7, kPad};
  EXPECT_EQ(sequence_log_prob(p, std::span<const TokenId>(x), std::span<const TokenId>(y)),
            sequence_log_prob(p, std::span<const TokenId>(x), std::span<const TokenId>(yp)));
}

TEST(Forward, StepDistributionsAreNormalizedAndConsistent) {
  const auto p = toy_model<double>(tiny_config(11), 6);
  const TokenSequence x{4, 8, 9}, y{5, 10};
  const auto lp = teacher_forced_log_probs(p, std::span<const TokenId>(x), std::span<const TokenId>(y));
  ASSERT_EQ(lp.rows, 3u);
  const auto enc = encode_source(p, std::span<const TokenId>(x));
  TokenSequence prefix{kBos};
  for (std::size_t t = 0; t < lp.rows; ++t) {
    double z = 0.0;
    for (double v : lp.row(t)) z += std::exp(v);
    EXPECT_NEAR(z, 1.0, 1e-12);
    const auto step = decoder_step(p, enc, prefix);
    for (std::size_t v = 0; v < step.size(); ++v) EXPECT_NEAR(step[v], lp(t, v), 1e-12);
    if (t < y.size()) prefix.push_back(y[t]);
  }
  double total = 0.0;
  for (std::size_t t = 0; t < lp.rows; ++t) total += lp(t, static_cast<std::size_t>(t < y.size() ? y[t] : kEos));
  EXPECT_NEAR(total, sequence_log_prob(p, std::span<const TokenId>(x), std::span<const TokenId>(y)), 1e-12);
}

TEST(Forward, ErrorsOnBadInput) {
  const auto p = toy_model<float>(tiny_config(10, 8, 2, 16, 4), 1);
  const TokenSequence ok{4}, bad{12}, too_long{4, 4, 4, 4, 4}, pads{kPad, kPad};
  EXPECT_THROW(sequence_log_prob(p, std::span<const TokenId>(bad), std::span<const TokenId>(ok)), Error);
  EXPECT_THROW(sequence_log_prob(p, std::span<const TokenId>(too_long), std::span<const TokenId>(ok)), Error);
  EXPECT_THROW(sequence_log_prob(p, std::span<const TokenId>(pads), std::span<const TokenId>(ok)), Error);
  const auto enc = encode_source(p, std::span<const TokenId>(ok));
  EXPECT_THROW(decoder_step(p, enc, std::vector<TokenId>{4}), Error);
}

TEST(ScoredSequence, DeferredBackwardScalesLinearly) {
  const auto p = toy_model<double>(tiny_config(10), 8);
  const TokenSequence x{4, 5}, y{6};
  auto g1 = p.tensors().zeros_like();
  auto g3 = p.tensors().zeros_like();
  ScoredSequence<double> a(p, std::span<const TokenId>(x), std::span<const TokenId>(y), g1);
  ScoredSequence<double> b(p, std::span<const TokenId>(x), std::span<const TokenId>(y), g3);
  EXPECT_EQ(a.log_prob(), b.log_prob());
  a.backward(1.0);
  b.backward(3.0);
  EXPECT_THROW(a.backward(1.0), Error);
  for (std::size_t i = 0; i < g1.count(); ++i) {
    for (std::size_t j = 0; j < g1[i].size(); ++j) EXPECT_NEAR(3.0 * g1[i].data[j], g3[i].data[j], 1e-12);
  }
}

TEST(LossAndGrads, MeanOfSequenceNll) {
  const auto p = toy_model<double>(tiny_config(10), 9);
  ClickLogDataset ds;
  ds.pairs.push_back({{4, 5}, {6, 7, 8}, 2});
  ds.pairs.push_back({{9}, {4}, 2});
  TensorSet<double> grads;
  const double loss = loss_and_grads(p, make_batch(ds, {0, 1}), grads);
  double expected = 0.0;
  for (const auto& pr : ds.pairs) {
    expected -= sequence_log_prob(p, std::span<const TokenId>(pr.query), std::span<const TokenId>(pr.title));
  }
  EXPECT_NEAR(loss, expected / 2.0, 1e-12);
  EXPECT_TRUE(grads.same_layout(p.tensors()));
  const auto [nll, tokens] = token_nll(p, make_batch(ds, {0, 1}));
  EXPECT_NEAR(nll, expected, 1e-12);
  EXPECT_EQ(tokens, 6u);
}

TEST(LossAndGrads, DropoutIsSeeded) {
  auto cfg = tiny_config(10);
  cfg.dropout = 0.3;
  const auto p = toy_model<double>(cfg, 10);
  ClickLogDataset ds;
  ds.pairs.push_back({{4, 5}, {6, 7}, 2});
  const auto batch = make_batch(ds, {0});
  TensorSet<double> g;
  const double a = loss_and_grads(p, batch, g, true, 5);
  const double b = loss_and_grads(p, batch, g, true, 5);
  const double c = loss_and_grads(p, batch, g, true, 6);
  const double eval = loss_and_grads(p, batch, g, false, 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_NE(a, eval);
}

TEST(LossAndGrads, NonFiniteParametersRaise) {
  auto p = toy_model<double>(tiny_config(10), 11);
  p.tensors().at("out.b").data[4] = std::nan("");
  EXPECT_THROW(p.check_finite(), NumericError);
  ClickLogDataset ds;
  ds.pairs.push_back({{4}, {4}, 2});
  TensorSet<double> g;
  EXPECT_THROW(loss_and_grads(p, make_batch(ds, {0}), g), NumericError);
}

TEST(Attention, RowsAreDistributionsAndTsvRoundTrips) {
  const auto p = toy_model<float>(tiny_config(10, 8, 2, 16, 6), 12);
  const TokenSequence x{4, 5, 6}, y{7, 8};
  const auto maps = attention_maps(p, std::span<const TokenId>(x), std::span<const TokenId>(y));
  ASSERT_EQ(maps.encoder_self.size(), 1u);
  ASSERT_EQ(maps.decoder_cross[0].size(), 2u);
  const auto& cross = maps.decoder_cross[0][1];
  EXPECT_EQ(cross.rows, 3u);
  EXPECT_EQ(cross.cols, 3u);
  for (std::size_t r = 0; r < cross.rows; ++r) {
    double s = 0.0;
    for (float v : cross.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  const auto& self = maps.decoder_self[0][0];
  EXPECT_EQ(self(0, 1), 0.0f);

  std::stringstream ss;
  write_attention_tsv(ss, maps);
  const auto back = read_attention_tsv(ss);
  ASSERT_EQ(back.decoder_cross.size(), 1u);
  for (std::size_t r = 0; r < cross.rows; ++r) {
    for (std::size_t c = 0; c < cross.cols; ++c) EXPECT_NEAR(back.decoder_cross[0][1](r, c), cross(r, c), 5e-7);
  }
  std::stringstream again;
  write_attention_tsv(again, back);
  std::stringstream first;
  write_attention_tsv(first, maps);
  EXPECT_EQ(again.str(), first.str());
}

TEST(ModelRole, StringRoundTrip) {
  for (auto r : {ModelRole::kForward, ModelRole::kBackward, ModelRole::kQueryToQuery}) {
    EXPECT_EQ(role_from_string(to_string(r)), r);
  }
  EXPECT_THROW(role_from_string("sideways"), Error);
}

}  // namespace
}  // namespace qrw
