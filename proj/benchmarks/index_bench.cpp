#include <algorithm>

#include <benchmark/benchmark.h>

#include "qrw/index.hpp"
#include "qrw/rng.hpp"

namespace {

struct Fixture {
  qrw::InvertedIndex index;
  std::vector<qrw::TokenSequence> queries;
};

// Zipf-like corpus so a few head tokens have long posting lists.
Fixture make_fixture(std::size_t docs, std::size_t rewrites) {
  qrw::Rng rng(11);
  const std::size_t vocab = 2000;
  auto token = [&] {
    const double u = qrw::uniform01(rng);
    return static_cast<qrw::TokenId>(4 + static_cast<std::size_t>(u * u * u * vocab));
  };
  std::vector<qrw::Document> corpus;
  for (std::size_t d = 0; d < docs; ++d) {
    qrw::Document doc{static_cast<qrw::DocId>(d), {}};
    for (int i = 0; i < 8; ++i) doc.tokens.push_back(token());
    corpus.push_back(std::move(doc));
  }
  Fixture f{qrw::build_index(corpus), {}};
  const qrw::TokenSequence original{token(), token(), token()};
  f.queries.push_back(original);
  for (std::size_t r = 0; r < rewrites; ++r) {
    auto q = original;
    q[qrw::uniform_index(rng, q.size())] = token();
    f.queries.push_back(q);
  }
  return f;
}

void BM_SeparateTrees(benchmark::State& state) {
  const auto f = make_fixture(50000, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    std::vector<qrw::DocId> all;
    for (const auto& q : f.queries) {
      const auto hits = qrw::evaluate(qrw::parse_query(q), f.index);
      all.insert(all.end(), hits.begin(), hits.end());
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    benchmark::DoNotOptimize(all);
  }
}
BENCHMARK(BM_SeparateTrees)->Arg(3)->Arg(9);

void BM_MergedTree(benchmark::State& state) {
  const auto f = make_fixture(50000, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(qrw::evaluate(qrw::merge_trees(f.queries), f.index));
}
BENCHMARK(BM_MergedTree)->Arg(3)->Arg(9);

void BM_MergedTreeEvaluateOnly(benchmark::State& state) {
  const auto f = make_fixture(50000, static_cast<std::size_t>(state.range(0)));
  const auto tree = qrw::merge_trees(f.queries);
  for (auto _ : state) benchmark::DoNotOptimize(qrw::evaluate(tree, f.index));
}
BENCHMARK(BM_MergedTreeEvaluateOnly)->Arg(3)->Arg(9);

void BM_BuildIndex(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(make_fixture(static_cast<std::size_t>(state.range(0)), 0));
}
BENCHMARK(BM_BuildIndex)->Arg(10000);

}  // namespace
