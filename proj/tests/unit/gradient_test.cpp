#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "qrw/train.hpp"
#include "toy.hpp"

namespace qrw {
namespace {

using testing::tiny_config;
using testing::toy_model;

Batch small_batch() {
  ClickLogDataset ds;
  ds.pairs.push_back({{4, 9, 11}, {5, 6}, 2});
  ds.pairs.push_back({{7}, {8, 10, 12, 4}, 3});
  ds.pairs.push_back({{13, 5}, {9}, 2});
  return make_batch(ds, {0, 1, 2});
}

TEST(GradientCheck, DoubleOneLayer) {
  const auto p = toy_model<double>(tiny_config(14, 8, 2, 16, 8), 31);
  for (const auto& [cls, r] : testing::check_gradients(p, small_batch(), 60, 1, 1e-4, 1e-12)) {
    EXPECT_GT(r.coordinates, 0u) << cls;
    EXPECT_LT(r.max_rel_error, 1e-5) << cls;
  }
}

TEST(GradientCheck, DoubleTwoLayersFourHeads) {
  auto cfg = tiny_config(14, 8, 4, 16, 8);
  cfg.num_layers = 2;
  const auto p = toy_model<double>(cfg, 32);
  for (const auto& [cls, r] : testing::check_gradients(p, small_batch(), 40, 2, 1e-4, 1e-12)) {
    EXPECT_LT(r.max_rel_error, 1e-5) << cls;
  }
}

TEST(GradientCheck, FloatAgainstDoubleDifferences) {
  const auto p = toy_model<float>(tiny_config(14, 8, 2, 16, 8), 33);
  for (const auto& [cls, r] : testing::check_gradients(p, small_batch(), 60, 3, 1e-4, 1e-12)) {
    EXPECT_LT(r.max_rel_error, 1e-3) << cls;
  }
}

// d/dtheta log sum_i exp(f_i + b_i) over a fixed title set equals the
// weight-averaged sequence gradients that cyclic_grads accumulates.
TEST(GradientCheck, CyclicTermGradient) {
  const auto cfg = tiny_config(9, 8, 2, 16, 6);
  auto fwd = toy_model<double>(cfg, 41);
  auto bwd = toy_model<double>(cfg, 42, false, ModelRole::kBackward);
  const TokenSequence x{4, 6};
  const std::vector<TokenSequence> titles{{5}, {7, 8}, {4, 4, 6}};
  const auto term = cyclic_term_over<double>(x, fwd, bwd, titles);
  auto gf = fwd.tensors().zeros_like();
  auto gb = bwd.tensors().zeros_like();
  cyclic_grads<double>(term, x, fwd, bwd, gf, gb, 1.0);

  Rng rng(5);
  double worst = 0.0;
  for (auto* pair : {&fwd, &bwd}) {
    auto& grads = pair == &fwd ? gf : gb;
    for (int s = 0; s < 60; ++s) {
      const std::size_t ti = uniform_index(rng, pair->tensors().count());
      auto& m = pair->tensors()[ti];
      const std::size_t j = uniform_index(rng, m.size());
      const double saved = m.data[j];
      m.data[j] = saved + 1e-5;
      const double up = cyclic_term_over<double>(x, fwd, bwd, titles).value;
      m.data[j] = saved - 1e-5;
      const double down = cyclic_term_over<double>(x, fwd, bwd, titles).value;
      m.data[j] = saved;
      const double fd = (up - down) / 2e-5;
      const double an = grads[ti].data[j];
      worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-7}));
    }
  }
  EXPECT_LT(worst, 1e-5);
}

}  // namespace
}  // namespace qrw
