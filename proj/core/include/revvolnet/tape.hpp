// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over an explicit operation record.
//
// Every recorded node owns its output buffer ("retained"). A node may later be
// released to save memory; backprop then asks the node's reconstruction
// callback to regenerate the value if a backward function needs it. Each node
// also declares whether its backward reads its inputs or its output, so
// activations nobody reads can be dropped early (see Tape::prune). Gradient
// buffers are freed as soon as the node they belong to has been processed, so
// only the derivatives on the current frontier are live at any time.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "revvolnet/tensor.hpp"

namespace revvolnet {

struct Parameter {
  Parameter(std::string name, Tensor initial, std::uint64_t id);

  std::string name;
  Tensor value;
  Tensor grad;
  std::uint64_t id = 0;

  void zero_grad() { grad.fill(0.0f); }
};

/// Owns parameters with stable addresses, in creation (registry) order.
class ParameterRegistry {
 public:
  Parameter& create(std::string name, Tensor initial);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::int64_t element_count() const;
  void zero_grad();

 private:
  std::deque<Parameter> params_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t index = 0;

  const Tensor& value() const;
  const Shape& shape() const;
};

class BackwardContext;
using BackwardFn = std::function<void(BackwardContext&)>;
using ReconstructFn = std::function<Tensor()>;

/// Which activations a node's backward function reads.
struct Saves {
  bool inputs = true;
  bool output = false;
};

struct TapeNode {
  std::string op;
  std::vector<std::size_t> inputs;
  std::vector<Parameter*> params;
  Shape shape;
  Tensor value;
  bool live = true;
  bool retained = true;
  bool requires_grad = false;
  bool leaf = false;
  Saves saves;
  BackwardFn backward;
  ReconstructFn reconstruct;
};

struct BackpropStats {
  std::int64_t peak_gradient_bytes = 0;
  std::int64_t final_gradient_bytes = 0;
  std::int64_t reconstructions = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false, std::string name = "input");
  Var record(std::string op, const std::vector<Var>& inputs, std::vector<Parameter*> params,
             Tensor output, BackwardFn backward, Saves saves = {});

  /// Live value of a node. Throws if the buffer has been released.
  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return nodes_.at(v.index).shape; }

  /// Drops a node's buffer and clears its retained flag. Backprop regenerates
  /// the value through `reconstruct` on demand; without one, any backward that
  /// needs the value fails naming the node.
  void release(Var v, ReconstructFn reconstruct);

  /// Releases every node recorded at or after `begin` whose activation no
  /// recorded backward reads, except leaves and the nodes in `keep`.
  void prune(std::size_t begin, const std::vector<Var>& keep);

  /// Bytes held by retained nodes whose buffers are live.
  std::int64_t retained_bytes() const { return retained_bytes_; }

  std::size_t size() const { return nodes_.size(); }
  const TapeNode& node(std::size_t i) const { return nodes_.at(i); }

  /// Backpropagates from a scalar loss (seed 1).
  void backward(Var loss);
  /// Vector-Jacobian product from an arbitrary node with the given seed.
  void backward(Var root, Tensor seed);

  /// Gradient of a leaf recorded with requires_grad after backward, else null.
  const Tensor* grad(Var v) const;
  Tensor take_grad(Var v);
  /// Moves a leaf's value out of the tape, releasing the node.
  Tensor take_value(Var v);

  const BackpropStats& last_stats() const { return stats_; }

 private:
  friend class BackwardContext;
  const Tensor& materialize(std::size_t index);

  std::vector<TapeNode> nodes_;
  std::vector<std::optional<Tensor>> leaf_grads_;
  std::vector<std::size_t> reconstructed_;
  std::int64_t retained_bytes_ = 0;
  BackpropStats stats_;
};

class BackwardContext {
 public:
  const Tensor& grad_output() const { return grad_; }
  /// Moves the incoming gradient out; grad_output() is empty afterwards.
  Tensor take_grad_output();
  /// Moves this node's activation out of the tape. Safe because every reader
  /// of it has already been processed; the caller owns it from here on.
  Tensor take_output();
  /// Hands back a recomputed value for a released input whose own backward
  /// reads it. Ignored for inputs that are live or that nobody will read.
  void provide_input(std::size_t i, Tensor value);
  const Tensor& input(std::size_t i);
  const Tensor& output();
  bool needs_input_grad(std::size_t i) const;
  void add_input_grad(std::size_t i, Tensor grad);
  std::size_t input_count() const { return node_.inputs.size(); }

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t index, Tensor& grad,
                  std::vector<std::optional<Tensor>>& grads, std::int64_t& live_bytes,
                  std::int64_t& peak_bytes);

  Tape& tape_;
  std::size_t index_;
  const TapeNode& node_;
  Tensor& grad_;
  std::vector<std::optional<Tensor>>& grads_;
  std::int64_t& live_bytes_;
  std::int64_t& peak_bytes_;
  bool taken_ = false;
};

/// Test hook: every input gradient produced by the backward of nodes with
/// this op name is scaled by 1.5. An empty name disables the fault.
void inject_backward_fault(std::string op);

}  // namespace revvolnet
