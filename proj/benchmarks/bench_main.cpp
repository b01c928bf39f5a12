#include <benchmark/benchmark.h>

#include <random>

#include "mocha/attention.hpp"
#include "mocha/data.hpp"
#include "mocha/decode.hpp"
#include "mocha/training.hpp"

using namespace mocha;

namespace {

Tensor random_probs(std::size_t l, std::size_t t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(l * t);
  for (auto& x : v) x = u(rng);
  return Tensor::constant({l, t}, v);
}

ModelConfig bench_config() {
  ModelConfig c;
  c.encoder.layers = 2;
  c.encoder.hidden = 64;
  c.encoder.feature_dim = 16;
  c.decoder.hidden = 64;
  c.decoder.vocab = 18;
  c.attention.attn_dim = 32;
  return c;
}

data::Corpus bench_corpus(std::size_t n) {
  data::TaskConfig t;
  t.utterances = n;
  t.symbols = 16;
  t.seed = 5;
  return data::gen_lookahead_task(t, 1);
}

void BM_ExpectedAlignment(benchmark::State& state, AlignmentAlgorithm algo) {
  const auto t = static_cast<std::size_t>(state.range(0));
  Tensor p = random_probs(t / 4, t, 1);
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(attention::expected_alignment(p, 1e-6, algo));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(t * (t / 4)));
}
BENCHMARK_CAPTURE(BM_ExpectedAlignment, scan, AlignmentAlgorithm::scan)->Range(32, 512);
BENCHMARK_CAPTURE(BM_ExpectedAlignment, cumulative, AlignmentAlgorithm::cumulative)
    ->Range(32, 512);

void BM_ExpectedAlignmentBackward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    Tensor p = Tensor::parameter({t / 4, t}, random_probs(t / 4, t, 2).values());
    ag::backward(ag::sum(attention::expected_alignment(p)));
    benchmark::DoNotOptimize(p.grad().data());
  }
}
BENCHMARK(BM_ExpectedAlignmentBackward)->Range(32, 256);

void BM_ChunkwiseAttention(benchmark::State& state) {
  const auto w = static_cast<std::size_t>(state.range(0));
  Tensor alpha = attention::expected_alignment(random_probs(32, 128, 3));
  Tensor u = random_probs(32, 128, 4);
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(attention::chunkwise_attention(alpha, u, w));
}
BENCHMARK(BM_ChunkwiseAttention)->Arg(1)->Arg(4)->Arg(16);

void BM_Encode(benchmark::State& state) {
  Model m(bench_config(), 1);
  auto corpus = bench_corpus(1);
  Tensor frames = data::stack_frames(corpus[0].frames, 1);
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.encode(frames));
  state.counters["frames"] = static_cast<double>(frames.rows());
}
BENCHMARK(BM_Encode);

void BM_TrainStep(benchmark::State& state) {
  training::TrainConfig cfg;
  cfg.model = bench_config();
  cfg.objective.mode = static_cast<objectives::Mode>(state.range(0));
  Model m(cfg.model, 1);
  auto corpus = bench_corpus(8);
  std::vector<const data::Utterance*> items;
  for (const auto& u : corpus) items.push_back(&u);
  auto batch = data::batch_pad(items, 1);
  training::AdamState adam;
  std::mt19937_64 rng(1);
  RunOptions run{true, &rng};
  for (auto _ : state) {
    m.params().zero_grad();
    Tensor loss = training::batch_loss(m, batch, cfg.objective, run);
    ag::backward(loss);
    training::adam_step(m.params(), adam, cfg, [](const std::string&) { return true; });
  }
  state.SetLabel(objectives::to_string(cfg.objective.mode));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(objectives::Mode::baseline))
    ->Arg(static_cast<int>(objectives::Mode::decot))
    ->Arg(static_cast<int>(objectives::Mode::minlt))
    ->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& state) {
  auto cfg = bench_config();
  cfg.attention.r_init = 0.0;
  Model m(cfg, 2);
  auto corpus = bench_corpus(1);
  Tensor frames = data::stack_frames(corpus[0].frames, 1);
  for (auto _ : state) benchmark::DoNotOptimize(decode::greedy_stream_decode(m, frames, 32));
}
BENCHMARK(BM_GreedyDecode);

void BM_BeamDecode(benchmark::State& state) {
  auto cfg = bench_config();
  cfg.attention.r_init = 0.0;
  Model m(cfg, 2);
  auto corpus = bench_corpus(1);
  Tensor frames = data::stack_frames(corpus[0].frames, 1);
  decode::BeamOptions opt;
  opt.beam = static_cast<std::size_t>(state.range(0));
  opt.max_len = 32;
  for (auto _ : state) benchmark::DoNotOptimize(decode::beam_stream_decode(m, frames, opt));
}
BENCHMARK(BM_BeamDecode)->Arg(1)->Arg(4)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
