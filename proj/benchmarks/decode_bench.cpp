#include <benchmark/benchmark.h>

#include "qrw/decode.hpp"
#include "qrw/model.hpp"

namespace {

qrw::ModelParameters<float> bench_model(std::size_t vocab) {
  qrw::ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 64;
  cfg.num_heads = 4;
  cfg.d_ff = 128;
  cfg.num_layers = 2;
  cfg.max_len = 16;
  return qrw::init_params<float>(cfg, 7);
}

const qrw::TokenSequence kQuery{4, 9, 17, 23};

void BM_GreedyDecode(benchmark::State& state) {
  const auto params = bench_model(static_cast<std::size_t>(state.range(0)));
  qrw::DecodeConfig cfg;
  cfg.max_steps = 8;
  for (auto _ : state) benchmark::DoNotOptimize(qrw::greedy_decode(params, kQuery, cfg));
}
BENCHMARK(BM_GreedyDecode)->Arg(256)->Arg(2048);

void BM_BeamSearch(benchmark::State& state) {
  const auto params = bench_model(512);
  qrw::DecodeConfig cfg;
  cfg.mode = qrw::DecodeMode::kBeam;
  cfg.k = static_cast<std::size_t>(state.range(0));
  cfg.max_steps = 8;
  for (auto _ : state) benchmark::DoNotOptimize(qrw::beam_search(params, kQuery, cfg));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(3)->Arg(8);

void BM_TopNSample(benchmark::State& state) {
  const auto params = bench_model(512);
  qrw::DecodeConfig cfg;
  cfg.k = static_cast<std::size_t>(state.range(0));
  cfg.n = 40;
  cfg.max_steps = 8;
  for (auto _ : state) {
    ++cfg.rng_seed;
    benchmark::DoNotOptimize(qrw::top_n_sample(params, kQuery, cfg));
  }
}
BENCHMARK(BM_TopNSample)->Arg(3)->Arg(8);

}  // namespace
