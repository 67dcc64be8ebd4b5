#include <benchmark/benchmark.h>

#include <map>
#include <string>
#include <vector>

#include "factsum/decoding.hpp"
#include "factsum/knowledge.hpp"
#include "factsum/metrics.hpp"
#include "factsum/model.hpp"
#include "factsum/random.hpp"
#include "factsum/training.hpp"

namespace {

using namespace factsum;

std::vector<int> random_ids(SplitMix64& rng, int n, int vocab) {
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) {
    ids.push_back(Vocabulary::kNumSpecial + static_cast<int>(rng.below(vocab - Vocabulary::kNumSpecial)));
  }
  return ids;
}

ModelConfig bench_config() {
  ModelConfig c;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 128;
  c.n_enc_layers = 2;
  c.n_dec_layers = 2;
  c.chunk_len = 128;
  c.max_src = 512;
  c.max_tgt = 64;
  c.vocab_size = 200;
  return c;
}

void BM_TopK(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const int dim = 64;
  SplitMix64 rng(1);
  FactIndex::Matrix m(static_cast<Eigen::Index>(n), dim);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < dim; ++c) m(r, c) = rng.uniform() - 0.5;
    m.row(r).normalize();
  }
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("F" + std::to_string(i));
  FactIndex index = FactIndex::from_vectors(ids, m);
  Vector q(dim);
  for (int c = 0; c < dim; ++c) q(c) = rng.uniform() - 0.5;
  for (auto _ : state) benchmark::DoNotOptimize(top_k(index, ids, q, 10));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n));
}
BENCHMARK(BM_TopK)->Arg(1000)->Arg(10000);

void BM_RougeL(benchmark::State& state) {
  SplitMix64 rng(2);
  auto words = [&](int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back("w" + std::to_string(rng.below(50)));
    return out;
  };
  auto cand = words(static_cast<int>(state.range(0)));
  auto ref = words(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(rouge_l(cand, ref));
}
BENCHMARK(BM_RougeL)->Arg(100)->Arg(400);

void BM_Rouge2(benchmark::State& state) {
  SplitMix64 rng(3);
  std::vector<std::string> cand, ref;
  for (int i = 0; i < 400; ++i) cand.push_back("w" + std::to_string(rng.below(50)));
  for (int i = 0; i < 400; ++i) ref.push_back("w" + std::to_string(rng.below(50)));
  for (auto _ : state) benchmark::DoNotOptimize(rouge_n(cand, ref, 2));
}
BENCHMARK(BM_Rouge2);

void BM_EncodeSource(benchmark::State& state) {
  ModelConfig cfg = bench_config();
  ModelParameters p = ModelParameters::initialize(cfg, 4);
  SplitMix64 rng(4);
  auto src = random_ids(rng, static_cast<int>(state.range(0)), cfg.vocab_size);
  for (auto _ : state) benchmark::DoNotOptimize(encode_source(src, cfg, p));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeSource)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg = bench_config();
  cfg.max_src = 128;
  TrainConfig tc;
  tc.mode = GuidanceMode::kEntitiesFacts;
  Trainer trainer(cfg, tc, ModelParameters::initialize(cfg, 5));
  SplitMix64 rng(5);
  std::vector<TrainExample> batch(4);
  for (auto& ex : batch) {
    ex.source = random_ids(rng, 126, cfg.vocab_size);
    ex.source.insert(ex.source.begin(), Vocabulary::kCls);
    ex.source.push_back(Vocabulary::kSep);
    ex.guidance = random_ids(rng, 24, cfg.vocab_size);
    ex.target = random_ids(rng, 30, cfg.vocab_size);
    ex.target.insert(ex.target.begin(), Vocabulary::kBos);
    ex.target.push_back(Vocabulary::kEos);
  }
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(batch));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_BeamSearch(benchmark::State& state) {
  ModelConfig cfg = bench_config();
  std::map<std::string, int> counts;
  for (int i = 0; i < cfg.vocab_size - Vocabulary::kNumSpecial; ++i) counts["w" + std::to_string(i)] = 1;
  Vocabulary vocab = Vocabulary::build(counts, 1);
  Checkpoint ckpt{cfg, GuidanceMode::kVanilla, vocab, ModelParameters::initialize(cfg, 6), {}};
  ckpt.params.output_b.value(0, Vocabulary::kEos) = -4.0;
  std::vector<std::string> src;
  for (int i = 0; i < 200; ++i) src.push_back("w" + std::to_string((i * 7) % 150));
  DecodeConfig dc;
  dc.beam_size = static_cast<int>(state.range(0));
  dc.max_len = 32;
  for (auto _ : state) benchmark::DoNotOptimize(summarize(ckpt, src, nullptr, dc));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace
