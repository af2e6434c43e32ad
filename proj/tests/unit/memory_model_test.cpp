// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "revvolnet/memory_model.hpp"
#include "revvolnet/profiling.hpp"
#include "revvolnet/random.hpp"

namespace revvolnet {
namespace {

ArchitectureSpec small(std::vector<std::int64_t> levels, bool reversible, std::int64_t group,
                       std::int64_t encoder_blocks = 1) {
  ArchitectureSpec spec;
  spec.levels = std::move(levels);
  spec.reversible = reversible;
  spec.group_size = group;
  spec.encoder_blocks = encoder_blocks;
  return spec;
}

CostGraph single_conv_graph() {
  CostNode conv;
  conv.name = "conv";
  conv.op = "conv";
  conv.inputs = {kNetworkInput};
  conv.shape = Shape(1, 1, 8, 8, 8);
  conv.parameters = 28;
  conv.saves = {true, false};
  CostGraph graph;
  graph.stored = {conv};
  graph.compact = {conv};
  graph.stored_fate = plan_retention(graph.stored);
  graph.compact_fate = plan_retention(graph.compact);
  graph.transient_bytes = {0};
  return graph;
}

TEST(MemoryModel, SingleConvHandAccounting) {
  const MemoryReport report = estimate_memory(single_conv_graph(), Shape(1, 1, 8, 8, 8));
  ASSERT_EQ(report.terms.size(), 1u);
  EXPECT_EQ(report.terms[0].activation_bytes, 512 * 4);
  EXPECT_EQ(report.terms[0].parameter_bytes, 28 * 4 * 4);
  EXPECT_EQ(report.terms[0].derivative_bytes, 512 * 4);
  EXPECT_EQ(report.total_nonrev_bytes, 4544);
  EXPECT_EQ(report.total_prev_bytes, 4544);
}

TEST(MemoryModel, EmptyGraphIsZero) {
  const MemoryReport report = estimate_memory(CostGraph{}, Shape(1, 1, 8, 8, 8));
  EXPECT_EQ(report.total_nonrev_bytes, 0);
  EXPECT_EQ(report.total_prev_bytes, 0);
}

TEST(MemoryModel, TotalsRecomputeFromTerms) {
  for (const ArchitectureSpec& spec :
       {small({8, 16, 32}, true, 4, 2), small({8, 16, 32}, false, 4), reversible_spec(), baseline_spec()}) {
    const MemoryReport report = estimate_memory(Network(spec), Shape(1, 4, 32, 32, 32));
    EXPECT_EQ(recompute_nonrev_total(report), report.total_nonrev_bytes);
    EXPECT_EQ(recompute_prev_total(report), report.total_prev_bytes);
    EXPECT_LE(report.total_prev_bytes, report.total_nonrev_bytes);
  }
}

TEST(MemoryModel, BatchDoublingScalesActivationTerms) {
  const Network network(small({8, 16, 32}, true, 4));
  const MemoryReport one = estimate_memory(network, Shape(1, 4, 16, 16, 16));
  const MemoryReport two = estimate_memory(network, Shape(2, 4, 16, 16, 16));
  ASSERT_EQ(one.terms.size(), two.terms.size());
  for (std::size_t i = 0; i < one.terms.size(); ++i) {
    EXPECT_EQ(two.terms[i].activation_bytes, 2 * one.terms[i].activation_bytes);
    EXPECT_EQ(two.terms[i].derivative_bytes, 2 * one.terms[i].derivative_bytes);
    EXPECT_EQ(two.terms[i].retained_bytes, 2 * one.terms[i].retained_bytes);
    EXPECT_EQ(two.terms[i].parameter_bytes, one.terms[i].parameter_bytes);
  }
}

TEST(MemoryModel, EncoderDepthSweepAddsOnlyParameterTerms) {
  const Shape input(1, 4, 32, 32, 32);
  const MemoryReport first = estimate_memory(Network(small({8, 16}, true, 4, 1)), input);
  for (std::int64_t depth = 2; depth <= 4; ++depth) {
    const Network deeper(small({8, 16}, true, 4, depth));
    const MemoryReport report = estimate_memory(deeper, input);
    const std::int64_t added_params =
        deeper.parameter_count() - Network(small({8, 16}, true, 4, 1)).parameter_count();
    EXPECT_EQ(report.total_prev_bytes - first.total_prev_bytes, added_params * 4 * kAdamMultiplier)
        << "depth " << depth;
    EXPECT_EQ(report.breakdown.parameter_bytes - first.breakdown.parameter_bytes,
              added_params * 4 * kAdamMultiplier);
  }
}

TEST(MemoryModel, NoSequencesMeansEqualTotals) {
  const MemoryReport report =
      estimate_memory(Network(small({8, 16, 32}, false, 4)), Shape(1, 4, 16, 16, 16));
  EXPECT_EQ(report.total_prev_bytes, report.total_nonrev_bytes);
}

TEST(MemoryModel, ReversibleBeatsBaselineAtDeskScale) {
  const Shape input(1, 4, 32, 32, 32);
  const MemoryReport rev =
      estimate_memory(Network(small({8, 16, 32, 48, 64}, true, 4)), input);
  const MemoryReport base =
      estimate_memory(Network(small({4, 8, 16, 32, 64}, false, 4)), input);
  EXPECT_LT(rev.total_prev_bytes, base.total_nonrev_bytes);
  const double reduction =
      1.0 - static_cast<double>(rev.total_prev_bytes) / static_cast<double>(base.total_nonrev_bytes);
  EXPECT_GE(reduction, 0.25);

  const MemoryReport full_rev = estimate_memory(Network(reversible_spec()), input);
  const MemoryReport full_base = estimate_memory(Network(baseline_spec()), input);
  EXPECT_LT(full_rev.total_prev_bytes, full_base.total_nonrev_bytes);
}

TEST(MemoryModel, BranchingCorrectionIsReported) {
  const MemoryReport report =
      estimate_memory(Network(small({8, 16, 32}, true, 4)), Shape(1, 4, 16, 16, 16));
  EXPECT_GE(report.breakdown.max_derivative_bytes, report.breakdown.naive_max_derivative_bytes);
  EXPECT_FALSE(report.backward_strategy.empty());
  EXPECT_NE(format_table(report).find("M_B"), std::string::npos);
}

// The estimator's retained and derivative terms describe exactly what the
// tape holds.
TEST(MemoryModel, TapeMatchesEstimate) {
  const Network network(small({8, 16, 32}, true, 2, 2), 3);
  const Shape input(1, 4, 16, 16, 16);
  const MemoryReport report = estimate_memory(network, input);
  Rng rng(1);
  const Tensor x = random_normal(input, 1.0f, rng);
  for (ExecutionMode mode : {ExecutionMode::kStoredActivations, ExecutionMode::kReversible}) {
    Tape tape;
    Var y = network.forward(tape.leaf(x), mode);
    const std::int64_t expected_retained =
        mode == ExecutionMode::kReversible
            ? report.breakdown.nonreversible_bytes + report.breakdown.boundary_bytes
            : report.breakdown.activation_bytes;
    EXPECT_EQ(tape.retained_bytes(), expected_retained + input.bytes()) << to_string(mode);
    tape.backward(y, Tensor(y.shape(), 1.0f));
    const std::int64_t expected_peak = mode == ExecutionMode::kReversible
                                           ? report.breakdown.max_reversible_frontier_bytes
                                           : report.breakdown.max_derivative_bytes;
    EXPECT_EQ(tape.last_stats().peak_gradient_bytes, expected_peak) << to_string(mode);
  }
}

TEST(MemoryModel, SequenceTransientMatchesMeasurement) {
  const Shape shape(2, 8, 8, 8, 8);
  Rng rng(2);
  ParameterRegistry registry;
  ResidualSettings settings;
  settings.group_size = 2;
  ReversibleSequence sequence(registry, "s", 8, 3, settings, rng);
  Tensor y = sequence.forward(random_normal(shape, 1.0f, rng));
  Tensor g = random_normal(shape, 1.0f, rng);
  const std::int64_t live = AllocationCounter::instance().live_bytes();
  const std::int64_t peak =
      measure_peak([&] { Tensor grad_in = sequence.backward(std::move(y), std::move(g)); });
  // Beyond the consumed output and gradient, the pass holds the returned
  // input gradient plus at most the modelled transient.
  EXPECT_LE(peak - live, sequence_transient_bytes(shape, false) + shape.bytes());
}

TEST(MemoryModel, MeasuredPeakWithinFactorOfEstimate) {
  const Shape input(1, 4, 16, 16, 16);
  for (const ArchitectureSpec& spec : {small({8, 16}, true, 4, 3), small({8, 16, 32}, true, 4),
                                       small({4, 8, 16}, false, 4)}) {
    Network network(spec, 5);
    const MemoryReport report = estimate_memory(network, input);
    const std::int64_t estimate = spec.reversible ? report.total_prev_bytes : report.total_nonrev_bytes;
    const std::int64_t measured = measure_training_step(network, input, native_mode(spec), 7);
    const double factor = static_cast<double>(measured) / static_cast<double>(estimate);
    EXPECT_GE(factor, 0.8) << spec.to_text();
    EXPECT_LE(factor, 1.5) << spec.to_text();
  }
}

TEST(MemoryModel, MeasuredPeakFlatInReversibleDepth) {
  const Shape input(1, 4, 32, 32, 32);
  auto peak = [&](std::int64_t depth, ExecutionMode mode) {
    Network network(small({8, 16}, true, 4, depth), 6);
    return static_cast<double>(measure_training_step(network, input, mode, 8));
  };
  const double rev_growth =
      peak(4, ExecutionMode::kReversible) / peak(1, ExecutionMode::kReversible) - 1.0;
  const double stored_growth =
      peak(4, ExecutionMode::kStoredActivations) / peak(1, ExecutionMode::kStoredActivations) - 1.0;
  EXPECT_LE(rev_growth, 0.05);
  EXPECT_GE(stored_growth, 0.40);
  RecordProperty("reversible_growth", std::to_string(rev_growth));
  RecordProperty("stored_growth", std::to_string(stored_growth));
}

}  // namespace
}  // namespace revvolnet
