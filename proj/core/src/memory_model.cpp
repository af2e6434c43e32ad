// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/memory_model.hpp"

#include <algorithm>
#include <sstream>

#include "revvolnet/allocation.hpp"

namespace revvolnet {

const char* to_string(CostKind kind) {
  switch (kind) {
    case CostKind::kNonReversible: return "non-reversible";
    case CostKind::kSequenceBoundary: return "sequence-boundary";
    case CostKind::kReversibleInterior: return "reversible-interior";
  }
  return "unknown";
}

std::int64_t sequence_transient_bytes(const Shape& output, bool regenerated) {
  const std::int64_t half = output.bytes() / 2;
  return (regenerated ? 4 : 2) * half;
}

std::vector<Fate> plan_retention(const std::vector<CostNode>& nodes) {
  std::vector<RetentionNode> plan;
  plan.reserve(nodes.size());
  for (const auto& node : nodes) {
    plan.push_back({node.inputs, node.saves, node.op == "sequence"});
  }
  return plan_retention(plan);
}

namespace {

std::int64_t params_of(const ResidualFunction& fn) {
  std::int64_t n = 0;
  for (const Parameter* p : fn.parameters()) n += p->value.element_count();
  return n;
}

int push(std::vector<CostNode>& nodes, CostNode node) {
  nodes.push_back(std::move(node));
  return static_cast<int>(nodes.size()) - 1;
}

void expand_sequence(std::vector<CostNode>& stored, const Layer& layer, int input,
                     const Shape& shape, int owner) {
  const ReversibleSequence& seq = *layer.sequence;
  const Shape half = shape.with_channels(shape.channels() / 2);
  auto interior = [&](const std::string& suffix, const char* op, std::vector<int> inputs,
                      std::int64_t parameters, bool reads_input) {
    return push(stored, {layer.name + suffix, op, CostKind::kReversibleInterior,
                         std::move(inputs), half, parameters, Saves{reads_input, false},
                         std::string(op) == "add", owner});
  };
  int a = interior(".split0", "slice", {input}, 0, false);
  int b = interior(".split1", "slice", {input}, 0, false);
  for (std::size_t k = 0; k < seq.blocks().size(); ++k) {
    const ReversibleBlock& block = seq.blocks()[k];
    const std::string base = ".block" + std::to_string(k);
    auto residual = [&](const ResidualFunction& fn, const std::string& tag, int source,
                        int target) {
      const std::int64_t norm = fn.gamma().value.element_count() + fn.beta().value.element_count();
      int t = interior(base + tag + ".norm", "group_norm", {source}, norm, true);
      t = interior(base + tag + ".act", "leaky_relu", {t}, 0, true);
      t = interior(base + tag + ".conv", "conv", {t}, params_of(fn) - norm, true);
      return interior(base + tag + ".add", "add", {target, t}, 0, false);
    };
    a = residual(block.f(), ".F", b, a);
    b = residual(block.g(), ".G", a, b);
  }
  push(stored, {layer.name, "concat", CostKind::kSequenceBoundary, {a, b}, shape, 0,
                Saves{false, false}, false, owner});
}

struct Simulation {
  std::vector<std::int64_t> peak;
  std::int64_t frontier = 0;
};

// Mirrors Tape::backward: seed on the last node, gradients accumulated into
// the first buffer that reaches an input, each node's buffer freed after it
// has been processed.
Simulation simulate(const std::vector<CostNode>& nodes, const std::vector<std::int64_t>* extra) {
  Simulation sim;
  sim.peak.assign(nodes.size(), 0);
  if (nodes.empty()) return sim;
  std::vector<bool> has(nodes.size(), false);
  has.back() = true;
  std::int64_t live = nodes.back().shape.bytes();
  sim.frontier = live;
  for (std::size_t i = nodes.size(); i-- > 0;) {
    if (!has[i]) continue;
    std::int64_t node_peak = live;
    if (extra) node_peak = std::max(node_peak, live + (*extra)[i]);
    const std::int64_t own = nodes[i].shape.bytes();
    bool own_freed = false;
    const auto& inputs = nodes[i].inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const int j = inputs[k];
      if (j == kNetworkInput) continue;
      if (nodes[i].moves_gradient && k + 1 == inputs.size()) {
        live -= own;
        own_freed = true;
      }
      const auto src = static_cast<std::size_t>(j);
      const std::int64_t bytes = nodes[src].shape.bytes();
      live += bytes;
      sim.frontier = std::max(sim.frontier, live);
      node_peak = std::max(node_peak, live);
      if (has[src]) {
        live -= bytes;
      } else {
        has[src] = true;
      }
    }
    if (!own_freed) live -= own;
    sim.peak[i] = node_peak;
  }
  return sim;
}

}  // namespace

CostGraph build_cost_graph(const Network& network, const Shape& input_shape) {
  const auto shapes = network.infer_shapes(input_shape);
  const auto& layers = network.layers();
  CostGraph graph;
  graph.compact_fate = network.retention(ExecutionMode::kReversible);

  std::vector<int> stored_index(layers.size(), kNetworkInput);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& layer = layers[l];
    const bool is_sequence = layer.kind == LayerKind::kSequence;
    const int owner = static_cast<int>(l);
    CostNode node{layer.name,
                  to_string(layer.kind),
                  is_sequence ? CostKind::kSequenceBoundary : CostKind::kNonReversible,
                  layer.inputs,
                  shapes[l],
                  layer.parameter_count(),
                  layer_saves(layer.kind, ExecutionMode::kReversible),
                  is_sequence || layer.kind == LayerKind::kAdd,
                  owner};
    graph.compact.push_back(node);
    graph.transient_bytes.push_back(
        is_sequence ? sequence_transient_bytes(shapes[l], graph.compact_fate[l] == Fate::kRegenerated)
                    : 0);

    std::vector<int> mapped;
    for (int in : layer.inputs) {
      mapped.push_back(in == kNetworkInput ? in : stored_index[static_cast<std::size_t>(in)]);
    }
    if (is_sequence) {
      expand_sequence(graph.stored, layer, mapped[0], shapes[l], owner);
    } else {
      node.inputs = std::move(mapped);
      node.saves = layer_saves(layer.kind, ExecutionMode::kStoredActivations);
      graph.stored.push_back(std::move(node));
    }
    stored_index[l] = static_cast<int>(graph.stored.size()) - 1;
  }
  graph.stored_fate = plan_retention(graph.stored);
  return graph;
}

MemoryReport estimate_memory(const CostGraph& graph, const Shape& input_shape,
                             std::int64_t optimizer_multiplier) {
  MemoryReport report;
  report.input_shape = input_shape;
  report.optimizer_multiplier = optimizer_multiplier;
  report.backward_strategy =
      "sequence backward takes over its retained output and incoming gradient, splitting each "
      "into halves, and holds at most 2 further half-width buffers while undoing F or G; a "
      "regenerated output adds 2 more; M_B adds these to the live derivative set";

  const Simulation stored = simulate(graph.stored, nullptr);
  const Simulation compact = simulate(graph.compact, &graph.transient_bytes);
  auto& b = report.breakdown;
  b.max_reversible_frontier_bytes = compact.frontier;

  for (std::size_t i = 0; i < graph.stored.size(); ++i) {
    const CostNode& node = graph.stored[i];
    const auto owner = static_cast<std::size_t>(node.owner);
    LayerCost cost;
    cost.id = static_cast<int>(i);
    cost.name = node.name;
    cost.op = node.op;
    cost.kind = node.kind;
    cost.output_bytes = node.shape.bytes();
    cost.activation_bytes = graph.stored_fate[i] == Fate::kRetained ? cost.output_bytes : 0;
    cost.parameter_bytes = node.parameters * 4 * optimizer_multiplier;
    cost.derivative_bytes = stored.peak[i];
    if (node.kind != CostKind::kReversibleInterior) {
      cost.retained_bytes = graph.compact_fate[owner] == Fate::kRetained ? cost.output_bytes : 0;
      cost.backward_bytes = compact.peak[owner];
    }
    report.terms.push_back(std::move(cost));
  }

  for (const auto& t : report.terms) {
    b.activation_bytes += t.activation_bytes;
    b.parameter_bytes += t.parameter_bytes;
    if (t.kind == CostKind::kNonReversible) b.nonreversible_bytes += t.retained_bytes;
    if (t.kind == CostKind::kSequenceBoundary) b.boundary_bytes += t.retained_bytes;
    b.max_derivative_bytes = std::max(b.max_derivative_bytes, t.derivative_bytes);
    b.max_backward_bytes = std::max(b.max_backward_bytes, t.backward_bytes);
    b.naive_max_derivative_bytes = std::max(b.naive_max_derivative_bytes, t.output_bytes);
  }
  report.total_nonrev_bytes = b.activation_bytes + b.parameter_bytes + b.max_derivative_bytes;
  report.total_prev_bytes =
      b.nonreversible_bytes + b.boundary_bytes + b.parameter_bytes + b.max_backward_bytes;
  return report;
}

MemoryReport estimate_memory(const Network& network, const Shape& input_shape,
                             std::int64_t optimizer_multiplier) {
  return estimate_memory(build_cost_graph(network, input_shape), input_shape,
                         optimizer_multiplier);
}

std::int64_t recompute_nonrev_total(const MemoryReport& report) {
  std::int64_t sum = 0;
  std::int64_t max_d = 0;
  for (const auto& t : report.terms) {
    sum += t.activation_bytes + t.parameter_bytes;
    max_d = std::max(max_d, t.derivative_bytes);
  }
  return sum + max_d;
}

std::int64_t recompute_prev_total(const MemoryReport& report) {
  std::int64_t sum = 0;
  std::int64_t max_b = 0;
  for (const auto& t : report.terms) {
    sum += t.retained_bytes + t.parameter_bytes;
    max_b = std::max(max_b, t.backward_bytes);
  }
  return sum + max_b;
}

std::int64_t measure_peak(const std::function<void()>& run) {
  auto& counter = AllocationCounter::instance();
  counter.reset_peak();
  run();
  return counter.peak_bytes();
}

std::string format_table(const MemoryReport& report) {
  const std::vector<std::string> header = {"id",  "layer",   "op",  "kind", "M_A",
                                           "M_N/M_S", "M_P", "M_D", "M_B"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& t : report.terms) {
    rows.push_back({std::to_string(t.id), t.name, t.op, to_string(t.kind),
                    std::to_string(t.activation_bytes), std::to_string(t.retained_bytes),
                    std::to_string(t.parameter_bytes), std::to_string(t.derivative_bytes),
                    std::to_string(t.backward_bytes)});
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::size_t pad = width[c] - cells[c].size();
      const bool numeric = c >= 4 || c == 0;
      if (c) out << "  ";
      if (numeric) out << std::string(pad, ' ') << cells[c];
      else out << cells[c] << std::string(c + 1 == cells.size() ? 0 : pad, ' ');
    }
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  const auto& b = report.breakdown;
  out << '\n'
      << "input shape                 " << report.input_shape.to_string() << '\n'
      << "optimizer multiplier        " << report.optimizer_multiplier << '\n'
      << "sum M_A                     " << b.activation_bytes << '\n'
      << "sum M_N                     " << b.nonreversible_bytes << '\n'
      << "sum M_S                     " << b.boundary_bytes << '\n'
      << "sum M_P                     " << b.parameter_bytes << '\n'
      << "max M_D                     " << b.max_derivative_bytes << '\n'
      << "max M_D (non-branching)     " << b.naive_max_derivative_bytes << '\n'
      << "max M_B                     " << b.max_backward_bytes << '\n'
      << "total, all activations      " << report.total_nonrev_bytes << '\n'
      << "total, reversible sequences " << report.total_prev_bytes << '\n';
  if (report.measured_peak_bytes) {
    out << "measured peak               " << *report.measured_peak_bytes << '\n';
  }
  return out.str();
}

}  // namespace revvolnet
