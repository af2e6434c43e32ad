// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic training-memory estimates and a runtime high-water counter.
//
// Two totals are derived from one per-layer term list:
//
//   nonreversible  = sum(M_A + M_P) + max M_D
//   partially rev. = sum M_N + sum M_S + sum M_P + max M_B
//
// Every layer output is one term. Sequences are expanded into their block
// interiors, which only count when activations are stored. Activation terms
// count only buffers some backward pass reads; the rest are dropped once
// their consumers have run, exactly as the taped forward does.
//
// Derivative terms follow the engine's backprop exactly. Gradients are freed
// once their node has been processed, branches accumulate into the first
// buffer that reaches them, and additions and sequences pass their incoming
// buffer on instead of copying it. M_D of a layer is the live derivative
// total while that layer is processed. M_B of a sequence is the live
// derivative total at that point plus the transient bytes of its backward
// pass. That pass takes over the retained output and the incoming gradient
// and splits each into halves, so beyond what is already counted it holds at
// most two half-width buffers while undoing F or G. A regenerated output,
// handed over by the following sequence's backward, adds two more.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "revvolnet/tensor.hpp"
#include "revvolnet/unet.hpp"

namespace revvolnet {

inline constexpr std::int64_t kAdamMultiplier = 4;

enum class CostKind { kNonReversible, kSequenceBoundary, kReversibleInterior };

const char* to_string(CostKind kind);

struct LayerCost {
  int id = 0;
  std::string name;
  std::string op;
  CostKind kind = CostKind::kNonReversible;
  std::int64_t output_bytes = 0;
  /// M_A: bytes kept when sequences store their interiors.
  std::int64_t activation_bytes = 0;
  /// M_N or M_S: bytes kept under reversible execution. Zero for interiors
  /// and for dropped or regenerated outputs.
  std::int64_t retained_bytes = 0;
  /// M_P: parameter elements x 4 x optimizer multiplier.
  std::int64_t parameter_bytes = 0;
  /// M_D: live derivative bytes while this layer is processed, all stored.
  std::int64_t derivative_bytes = 0;
  /// Reversible execution: M_B for boundaries, live derivative bytes for
  /// other layers, zero for interiors.
  std::int64_t backward_bytes = 0;
};

struct MemoryBreakdown {
  std::int64_t activation_bytes = 0;      // sum M_A
  std::int64_t nonreversible_bytes = 0;   // sum M_N
  std::int64_t boundary_bytes = 0;        // sum M_S
  std::int64_t parameter_bytes = 0;       // sum M_P
  std::int64_t max_derivative_bytes = 0;  // max M_D
  std::int64_t max_backward_bytes = 0;    // max of M_B and reversible-mode M_D
  /// Non-branching approximation: the largest single activation derivative.
  std::int64_t naive_max_derivative_bytes = 0;
  /// Largest live derivative set under reversible execution, excluding
  /// transients inside sequences.
  std::int64_t max_reversible_frontier_bytes = 0;
};

struct MemoryReport {
  Shape input_shape;
  std::int64_t optimizer_multiplier = kAdamMultiplier;
  std::vector<LayerCost> terms;
  std::int64_t total_nonrev_bytes = 0;
  std::int64_t total_prev_bytes = 0;
  MemoryBreakdown breakdown;
  std::optional<std::int64_t> measured_peak_bytes;
  std::string backward_strategy;
};

/// One node of the graph the estimator walks; exposed for direct use on
/// hand-built graphs.
struct CostNode {
  std::string name;
  std::string op;
  CostKind kind = CostKind::kNonReversible;
  std::vector<int> inputs;  // kNetworkInput for the external input
  Shape shape;
  std::int64_t parameters = 0;
  Saves saves;
  /// The backward hands its incoming gradient buffer to its last input.
  bool moves_gradient = false;
  /// Index of the compact node this one belongs to.
  int owner = 0;
};

struct CostGraph {
  /// All activations with sequences expanded.
  std::vector<CostNode> stored;
  /// Sequences collapsed into one node each.
  std::vector<CostNode> compact;
  std::vector<Fate> stored_fate;
  std::vector<Fate> compact_fate;
  /// Per compact node: extra bytes inside its backward.
  std::vector<std::int64_t> transient_bytes;
};

CostGraph build_cost_graph(const Network& network, const Shape& input_shape);

MemoryReport estimate_memory(const CostGraph& graph, const Shape& input_shape,
                             std::int64_t optimizer_multiplier = kAdamMultiplier);
MemoryReport estimate_memory(const Network& network, const Shape& input_shape,
                             std::int64_t optimizer_multiplier = kAdamMultiplier);

/// Totals recomputed from the term list; used to check report consistency.
std::int64_t recompute_nonrev_total(const MemoryReport& report);
std::int64_t recompute_prev_total(const MemoryReport& report);

/// Transient bytes of a reversible sequence backward pass.
std::int64_t sequence_transient_bytes(const Shape& output, bool regenerated);

/// Retention plan for a hand-built graph.
std::vector<Fate> plan_retention(const std::vector<CostNode>& nodes);

/// High-water mark of live tensor bytes while `run` executes, including
/// buffers that were already live when it started.
std::int64_t measure_peak(const std::function<void()>& run);

/// Aligned plain-text rendering of the report.
std::string format_table(const MemoryReport& report);

}  // namespace revvolnet
