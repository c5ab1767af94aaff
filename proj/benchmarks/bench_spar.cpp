#include <benchmark/benchmark.h>

#include "spar/autodiff.hpp"
#include "spar/config.hpp"
#include "spar/train.hpp"
#include "spar/transformer.hpp"

namespace {

using namespace spar;

Tensor filled(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  ad::Tape tape(false);
  const auto a = tape.constant(filled({n, n}, 1));
  const auto b = tape.constant(filled({n, n}, 2));
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b).value().data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

// Forward and backward through one pre-norm block at the default width.
void BM_EncoderBlock(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  ParameterStore store;
  Rng rng(3);
  const StackParams stack = make_stack(store, "s", StackConfig{64, 4, 1, 128}, rng, 0.02);
  Parameter& x = store.create("x", filled({tokens, 64}, 4));
  for (auto _ : state) {
    ad::Tape tape;
    auto y = ad::sum(encoder_stack(tape, stack, tape.parameter(x)));
    tape.backward(y);
    store.zero_grad();
  }
}
BENCHMARK(BM_EncoderBlock)->Arg(12)->Arg(48)->Arg(96);

// One pretraining step (batch of 8) on the default configuration.
void BM_PretrainStep(benchmark::State& state) {
  RunConfig cfg;
  cfg.data_samples = 16;
  const Dataset data = make_dataset(cfg.synth(), 5);
  SparModel model(cfg.model(data), 6);
  PretrainConfig p = cfg.pretrain();
  p.steps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(pretrain(model, data, p).history.back().loss);
}
BENCHMARK(BM_PretrainStep)->Unit(benchmark::kMillisecond);

void BM_Representation(benchmark::State& state) {
  RunConfig cfg;
  cfg.data_samples = 4;
  const Dataset data = make_dataset(cfg.synth(), 7);
  const SparModel model(cfg.model(data), 8);
  const PreparedInput in = prepare_input(data.samples[0]);
  for (auto _ : state) benchmark::DoNotOptimize(representation(model, in.input).concatenated.data().data());
}
BENCHMARK(BM_Representation)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
