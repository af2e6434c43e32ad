// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "revvolnet/allocation.hpp"
#include "revvolnet/memory_model.hpp"
#include "revvolnet/reversible.hpp"
#include "revvolnet/verification.hpp"

namespace revvolnet {
namespace {

ResidualSettings small_groups() {
  ResidualSettings settings;
  settings.group_size = 2;
  return settings;
}

void zero_convs(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    if (p->name.ends_with(".weight") || p->name.ends_with(".bias")) p->value.fill(0.0f);
  }
}

// Makes fn(x) == value on every voxel: GroupNorm collapses to beta = 1,
// LeakyReLU keeps it, and the conv scales it by its centre tap.
void make_constant(const ResidualFunction& fn, float value) {
  fn.gamma().value.fill(0.0f);
  fn.beta().value.fill(1.0f);
  Tensor& w = fn.weight().value;
  w.fill(0.0f);
  w.at(0, 0, 1, 1, 1) = value;
  fn.bias().value.fill(0.0f);
}

TEST(ReversibleBlock, ZeroResidualsAreIdentity) {
  Rng rng(1);
  ParameterRegistry registry;
  ReversibleBlock block(registry, "b", 8, small_groups(), rng);
  zero_convs(block.parameters());
  const Shape half(1, 4, 4, 4, 4);
  const Tensor x1 = random_normal(half, 1.0f, rng);
  const Tensor x2 = random_normal(half, 1.0f, rng);
  const auto [y1, y2] = block.forward(x1, x2);
  EXPECT_TRUE(bit_equal(y1, x1));
  EXPECT_TRUE(bit_equal(y2, x2));
  const auto [r1, r2] = block.inverse(y1, y2);
  EXPECT_TRUE(bit_equal(r1, x1));
  EXPECT_TRUE(bit_equal(r2, x2));
}

TEST(ReversibleBlock, HandEvaluatedCoupling) {
  Rng rng(2);
  ParameterRegistry registry;
  ResidualSettings settings;
  settings.group_size = 1;
  ReversibleBlock block(registry, "b", 2, settings, rng);
  make_constant(block.f(), 1.0f);
  make_constant(block.g(), 2.0f);
  const Shape voxel(1, 1, 1, 1, 1);
  const auto [y1, y2] = block.forward(Tensor(voxel, 1.0f), Tensor(voxel, 2.0f));
  EXPECT_FLOAT_EQ(y1[0], 2.0f);  // 1 + F = 1 + 1
  EXPECT_FLOAT_EQ(y2[0], 4.0f);  // 2 + G = 2 + 2
  const auto [x1, x2] = block.inverse(y1, y2);
  EXPECT_FLOAT_EQ(x2[0], 2.0f);
  EXPECT_FLOAT_EQ(x1[0], 1.0f);
}

TEST(ReversibleBlock, RandomRoundTrip) {
  const InversionCheck check = inversion_trials(7, 100, 8, 8, 1e-4);
  EXPECT_TRUE(check.passed) << check.max_error;
  EXPECT_LE(check.max_error, 1e-4);
}

TEST(ReversibleSequence, EmptyIsIdentity) {
  Rng rng(3);
  ParameterRegistry registry;
  ReversibleSequence sequence(registry, "s", 8, 0, small_groups(), rng);
  const Tensor x = random_normal(Shape(1, 8, 2, 2, 2), 1.0f, rng);
  EXPECT_TRUE(bit_equal(sequence.forward(x), x));
  EXPECT_TRUE(bit_equal(sequence.inverse(x), x));
}

TEST(ReversibleSequence, OneBlockMatchesManualComposition) {
  Rng rng(4);
  ParameterRegistry registry;
  ReversibleSequence sequence(registry, "s", 8, 1, small_groups(), rng);
  const Tensor x = random_normal(Shape(2, 8, 4, 4, 4), 1.0f, rng);
  const auto [y1, y2] = sequence.blocks()[0].forward(kernels::slice_channels(x, 0, 4),
                                                     kernels::slice_channels(x, 4, 8));
  EXPECT_TRUE(bit_equal(sequence.forward(x), kernels::concat_channels(y1, y2)));
}

TEST(ReversibleSequence, RetainedBytesIndependentOfDepth) {
  const Shape shape(1, 8, 8, 8, 8);
  std::vector<std::int64_t> growth;
  for (std::int64_t depth : {1, 4}) {
    Rng rng(5);
    ParameterRegistry registry;
    ReversibleSequence sequence(registry, "s", 8, depth, small_groups(), rng);
    Tape tape;
    Var x = tape.leaf(random_normal(shape, 1.0f, rng), true);
    const std::int64_t before = tape.retained_bytes();
    sequence.forward(x, ExecutionMode::kReversible);
    growth.push_back(tape.retained_bytes() - before);
  }
  EXPECT_EQ(growth[0], growth[1]);
  EXPECT_EQ(growth[0], shape.bytes());
}

TEST(ReversibleSequence, StoredReferenceGrowsLinearly) {
  const Shape shape(1, 8, 4, 4, 4);
  std::vector<std::int64_t> retained;
  for (std::int64_t depth = 1; depth <= 4; ++depth) {
    Rng rng(6);
    ParameterRegistry registry;
    ReversibleSequence sequence(registry, "s", 8, depth, small_groups(), rng);
    Tape tape;
    sequence.forward(tape.leaf(random_normal(shape, 1.0f, rng), true),
                     ExecutionMode::kStoredActivations);
    retained.push_back(tape.retained_bytes());
  }
  const std::int64_t step = retained[1] - retained[0];
  EXPECT_GT(step, 0);
  EXPECT_EQ(retained[2] - retained[1], step);
  EXPECT_EQ(retained[3] - retained[2], step);
}

TEST(ReversibleSequence, GradientsMatchStoredReference) {
  for (std::int64_t depth = 1; depth <= 6; ++depth) {
    const EquivalenceCheck check = sequence_equivalence(100 + depth, depth);
    EXPECT_LE(check.worst_relative_error, 1e-4) << "depth " << depth << " " << check.worst_tensor;
  }
}

TEST(ReversibleSequence, ZeroResidualsPassGradientThrough) {
  Rng rng(8);
  ParameterRegistry registry;
  ReversibleSequence sequence(registry, "s", 8, 3, small_groups(), rng);
  zero_convs(sequence.parameters());
  const Shape shape(2, 8, 4, 4, 4);
  const Tensor x = random_normal(shape, 1.0f, rng);
  const Tensor g = random_normal(shape, 1.0f, rng);
  Tensor reconstructed;
  const Tensor grad_in = sequence.backward(sequence.forward(x), g, &reconstructed);
  EXPECT_TRUE(bit_equal(grad_in, g));
  EXPECT_TRUE(bit_equal(reconstructed, x));
}

TEST(ReversibleSequence, BackwardTransientIndependentOfDepth) {
  const Shape shape(2, 8, 8, 8, 8);
  std::vector<std::int64_t> transient;
  for (std::int64_t depth : {1, 6}) {
    Rng rng(9);
    ParameterRegistry registry;
    ReversibleSequence sequence(registry, "s", 8, depth, small_groups(), rng);
    Tensor y = sequence.forward(random_normal(shape, 1.0f, rng));
    Tensor g = random_normal(shape, 1.0f, rng);
    const std::int64_t live = AllocationCounter::instance().live_bytes();
    const std::int64_t peak = measure_peak(
        [&] { Tensor grad_in = sequence.backward(std::move(y), std::move(g)); });
    transient.push_back(peak - live);
  }
  EXPECT_EQ(transient[0], transient[1]);
}

TEST(ReversibleSequence, RejectsOddWidth) {
  Rng rng(10);
  ParameterRegistry registry;
  EXPECT_THROW(ReversibleSequence(registry, "s", 7, 1, small_groups(), rng),
               std::invalid_argument);
}

}  // namespace
}  // namespace revvolnet
