// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "revvolnet/kernels.hpp"
#include "revvolnet/profiling.hpp"
#include "revvolnet/reversible.hpp"

namespace revvolnet {
namespace {

// Args: channels, spatial extent.
void BM_Conv3d(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  const std::int64_t n = state.range(1);
  Rng rng(1);
  const Tensor x = random_normal(Shape(1, c, n, n, n), 1.0f, rng);
  const Tensor w = random_normal(Shape(c, c, 3, 3, 3), 0.1f, rng);
  const Tensor b(Shape(1, c, 1, 1, 1));
  const kernels::Padding pad = kernels::same_padding(w.shape());
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv3d(x, w, b, pad));
  state.SetItemsProcessed(state.iterations() * n * n * n * c * c * 27);
}
BENCHMARK(BM_Conv3d)->Args({8, 16})->Args({16, 32})->Unit(benchmark::kMillisecond);

void BM_GroupNorm(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  const std::int64_t n = state.range(1);
  Rng rng(2);
  const Tensor x = random_normal(Shape(1, c, n, n, n), 1.0f, rng);
  const Tensor gamma(Shape(1, c, 1, 1, 1), 1.0f);
  const Tensor beta(Shape(1, c, 1, 1, 1));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::group_norm(x, gamma, beta, 4, 1e-5f));
  state.SetBytesProcessed(state.iterations() * x.shape().bytes());
}
BENCHMARK(BM_GroupNorm)->Args({16, 32})->Unit(benchmark::kMicrosecond);

// Args: depth.
void BM_SequenceForward(benchmark::State& state) {
  Rng rng(3);
  ParameterRegistry registry;
  ResidualSettings settings;
  settings.group_size = 4;
  const ReversibleSequence sequence(registry, "s", 16, state.range(0), settings, rng);
  const Tensor x = random_normal(Shape(1, 16, 16, 16, 16), 1.0f, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sequence.forward(x));
}
BENCHMARK(BM_SequenceForward)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_SequenceBackward(benchmark::State& state) {
  Rng rng(4);
  ParameterRegistry registry;
  ResidualSettings settings;
  settings.group_size = 4;
  const ReversibleSequence sequence(registry, "s", 16, state.range(0), settings, rng);
  const Shape shape(1, 16, 16, 16, 16);
  const Tensor y = sequence.forward(random_normal(shape, 1.0f, rng));
  const Tensor g = random_normal(shape, 1.0f, rng);
  for (auto _ : state) {
    Tensor out = y;
    Tensor grad = g;
    benchmark::DoNotOptimize(sequence.backward(std::move(out), std::move(grad)));
  }
}
BENCHMARK(BM_SequenceBackward)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

// Arg: 1 for reversible execution, 0 for stored activations.
void BM_TrainingStep(benchmark::State& state) {
  ArchitectureSpec spec;
  spec.levels = {8, 16};
  spec.group_size = 4;
  spec.encoder_blocks = 3;
  Network network(spec, 5);
  AdamOptimizer optimizer(network.registry());
  const ExecutionMode mode =
      state.range(0) ? ExecutionMode::kReversible : ExecutionMode::kStoredActivations;
  Rng rng(6);
  const LabeledVolume batch = random_batch(Shape(1, 4, 32, 32, 32), 3, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(training_step(network, optimizer, batch, mode, 1e-4, 1e-5, 1e-5));
  }
  state.SetLabel(to_string(mode));
}
BENCHMARK(BM_TrainingStep)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace revvolnet

BENCHMARK_MAIN();
