// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Whole training-step timing and memory measurements on random data.

#pragma once

#include <cstdint>
#include <vector>

#include "revvolnet/random.hpp"
#include "revvolnet/training.hpp"
#include "revvolnet/unet.hpp"

namespace revvolnet {

/// Standard-normal image with Bernoulli(0.3) region masks.
LabeledVolume random_batch(const Shape& input, std::int64_t regions, Rng& rng);

/// Mode in which a network of this spec trains by default.
ExecutionMode native_mode(const ArchitectureSpec& spec);

/// Peak live tensor bytes over one training step, taken after a warm-up step
/// so that parameters, gradients and optimizer moments already exist.
std::int64_t measure_training_step(Network& network, const Shape& input, ExecutionMode mode,
                                   std::uint64_t seed);

struct ModeTiming {
  std::vector<double> seconds;
  /// Peak bytes of one step, excluding buffers owned by the other mode.
  std::int64_t peak_bytes = 0;

  double mean() const;
  double median() const;
  double min() const;
};

struct StepComparison {
  ModeTiming reversible;
  ModeTiming reference;

  double time_ratio() const { return reversible.mean() / reference.mean(); }
  double median_time_ratio() const { return reversible.median() / reference.median(); }
};

/// Trains two identical networks, one per execution mode, alternating step
/// by step so that drift in machine load affects both alike.
StepComparison compare_step_times(const ArchitectureSpec& spec, const Shape& input,
                                  std::int64_t steps, std::int64_t warmup, std::uint64_t seed);

}  // namespace revvolnet
