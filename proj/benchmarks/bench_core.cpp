// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "tckd/dataset.hpp"
#include "tckd/encoder.hpp"
#include "tckd/model.hpp"
#include "tckd/ops.hpp"
#include "tckd/synth.hpp"
#include "tckd/tasks.hpp"

namespace {

using namespace tckd;

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::from({r, c}, std::move(v));
}

const DatasetSplit& bench_split() {
  static const DatasetSplit split = [] {
    SynthConfig sc;
    sc.num_users = 8;
    sc.samples_per_user = 20;
    sc.phrase_pool = default_phrase_pool();
    sc.seed = 1;
    sc.min_profile_separation = 30.0;
    return prepare_split(split_dataset(synth_generate(sc), 0.2, 1), 64);
  }();
  return split;
}

ModelConfig bench_model_config() {
  const auto& s = bench_split();
  ModelConfig c;
  c.num_users = s.roster.size();
  c.subword_vocab = s.vocab.subword_count();
  c.char_vocab = s.vocab.char_count();
  c.dropout = 0.0;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_TransformerBlock(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  ParameterSet p;
  const auto w = BlockWeights::init(p, "b.", 64, 128, rng);
  const Tensor x = random_matrix(rows, 64, rng);
  const BatchLayout layout{{{0, rows}}, std::vector<std::uint8_t>(rows, 1)};
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(transformer_block(x, w, layout, 4));
}
BENCHMARK(BM_TransformerBlock)->Arg(16)->Arg(64);

void BM_TemporalEncoder(benchmark::State& state) {
  const auto& split = bench_split();
  const Model m = Model::create(bench_model_config(), 3);
  const auto& seq = split.train.front();
  std::vector<const Token*> toks;
  for (const auto& t : seq.tokens)
    if (!t.char_ids.empty()) toks.push_back(&t);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(m.encoder().encode_tokens(toks, true));
}
BENCHMARK(BM_TemporalEncoder);

void BM_ModelForward(benchmark::State& state) {
  const auto& split = bench_split();
  const Model m = Model::create(bench_model_config(), 4);
  std::vector<const TokenizedSequence*> batch;
  for (std::size_t i = 0; i < 8; ++i) batch.push_back(&split.train[i]);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(batch).logits);
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

void BM_ModelForwardBackward(benchmark::State& state) {
  const auto& split = bench_split();
  Model m = Model::create(bench_model_config(), 5);
  std::vector<const TokenizedSequence*> batch;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 8; ++i) {
    batch.push_back(&split.train[i]);
    labels.push_back(split.train_labels[i]);
  }
  for (auto _ : state) {
    m.params().zero_grad();
    backward(ops::cross_entropy(m.forward(batch).logits, labels));
  }
}
BENCHMARK(BM_ModelForwardBackward)->Unit(benchmark::kMillisecond);

void BM_ComputeEer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(1.0, 1.0), i(0.0, 1.0);
  ScoreSet s;
  for (std::size_t k = 0; k < n; ++k) {
    s.genuine.push_back(g(rng));
    s.impostor.push_back(i(rng));
  }
  for (auto _ : state) benchmark::DoNotOptimize(compute_eer(s));
  state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_ComputeEer)->Range(256, 16384)->Complexity(benchmark::oNLogN);

}  // namespace

BENCHMARK_MAIN();
