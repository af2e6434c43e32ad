// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/profiling.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "revvolnet/allocation.hpp"
#include "revvolnet/memory_model.hpp"

namespace revvolnet {

namespace {

constexpr double kLearningRate = 1e-4;
constexpr double kDiceEpsilon = 1e-5;

struct Runner {
  Runner(ExecutionMode m, const ArchitectureSpec& spec, std::uint64_t seed)
      : mode(m), network(spec, seed), optimizer(network.registry()), rng(seed) {}

  LabeledVolume next_batch(const Shape& input) {
    return random_batch(input, network.spec().out_regions, rng);
  }

  void step(LabeledVolume batch) {
    training_step(network, optimizer, std::move(batch), mode, kLearningRate, 0.0, kDiceEpsilon);
  }

  ExecutionMode mode;
  Network network;
  AdamOptimizer optimizer;
  Rng rng;
  std::int64_t resident_bytes = 0;
  ModeTiming timing;
};

}  // namespace

LabeledVolume random_batch(const Shape& input, std::int64_t regions, Rng& rng) {
  LabeledVolume batch;
  batch.image = random_normal(input, 1.0f, rng);
  batch.regions = Tensor(input.with_channels(regions));
  std::bernoulli_distribution coin(0.3);
  for (float& v : batch.regions.data()) v = coin(rng) ? 1.0f : 0.0f;
  return batch;
}

ExecutionMode native_mode(const ArchitectureSpec& spec) {
  return spec.reversible ? ExecutionMode::kReversible : ExecutionMode::kStoredActivations;
}

std::int64_t measure_training_step(Network& network, const Shape& input, ExecutionMode mode,
                                   std::uint64_t seed) {
  Rng rng(seed);
  AdamOptimizer optimizer(network.registry());
  const std::int64_t regions = network.spec().out_regions;
  training_step(network, optimizer, random_batch(input, regions, rng), mode, kLearningRate, 0.0,
                kDiceEpsilon);
  LabeledVolume batch = random_batch(input, regions, rng);
  return measure_peak([&] {
    training_step(network, optimizer, std::move(batch), mode, kLearningRate, 0.0, kDiceEpsilon);
  });
}

double ModeTiming::mean() const {
  return std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(seconds.size());
}

double ModeTiming::median() const {
  std::vector<double> v = seconds;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double ModeTiming::min() const { return *std::min_element(seconds.begin(), seconds.end()); }

StepComparison compare_step_times(const ArchitectureSpec& spec, const Shape& input,
                                  std::int64_t steps, std::int64_t warmup, std::uint64_t seed) {
  if (steps <= 0) throw std::invalid_argument("compare_step_times: steps must be positive");
  auto& counter = AllocationCounter::instance();
  std::array<std::unique_ptr<Runner>, 2> runners;
  const std::array modes{ExecutionMode::kReversible, ExecutionMode::kStoredActivations};
  for (std::size_t k = 0; k < runners.size(); ++k) {
    const std::int64_t before = counter.live_bytes();
    runners[k] = std::make_unique<Runner>(modes[k], spec, seed);
    runners[k]->resident_bytes = counter.live_bytes() - before;
  }
  runners[0]->network.check_input(input);

  for (std::int64_t i = 0; i < warmup; ++i) {
    for (auto& r : runners) r->step(r->next_batch(input));
  }
  for (std::int64_t i = 0; i < steps; ++i) {
    for (std::size_t k = 0; k < runners.size(); ++k) {
      // Alternate which mode goes first.
      Runner& r = *runners[(k + static_cast<std::size_t>(i)) % 2];
      const Runner& other = *runners[(k + static_cast<std::size_t>(i) + 1) % 2];
      LabeledVolume batch = r.next_batch(input);
      const auto start = std::chrono::steady_clock::now();
      const std::int64_t peak = measure_peak([&] { r.step(std::move(batch)); });
      r.timing.seconds.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      r.timing.peak_bytes = std::max(r.timing.peak_bytes, peak - other.resident_bytes);
    }
  }
  return {std::move(runners[0]->timing), std::move(runners[1]->timing)};
}

}  // namespace revvolnet
