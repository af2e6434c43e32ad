// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/tape.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace revvolnet {

Parameter::Parameter(std::string name_, Tensor initial, std::uint64_t id_)
    : name(std::move(name_)), value(std::move(initial)), grad(value.shape()), id(id_) {}

Parameter& ParameterRegistry::create(std::string name, Tensor initial) {
  const auto id = static_cast<std::uint64_t>(params_.size());
  return params_.emplace_back(std::move(name), std::move(initial), id);
}

std::int64_t ParameterRegistry::element_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += p.value.element_count();
  return total;
}

void ParameterRegistry::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

const Tensor& Var::value() const { return tape->value(*this); }
const Shape& Var::shape() const { return tape->shape(*this); }

namespace {

std::string& fault_op() {
  static std::string op;
  return op;
}

std::string describe(std::size_t index, const TapeNode& node) {
  return "node #" + std::to_string(index) + " (" + node.op + ")";
}

}  // namespace

Var Tape::leaf(Tensor value, bool requires_grad, std::string name) {
  TapeNode node;
  node.op = std::move(name);
  node.shape = value.shape();
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.leaf = true;
  retained_bytes_ += node.shape.bytes();
  nodes_.push_back(std::move(node));
  leaf_grads_.emplace_back();
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string op, const std::vector<Var>& inputs, std::vector<Parameter*> params,
                 Tensor output, BackwardFn backward, Saves saves) {
  TapeNode node;
  node.op = std::move(op);
  node.requires_grad = !params.empty();
  for (const Var& v : inputs) {
    if (v.tape != this) throw std::invalid_argument(node.op + ": input belongs to another tape");
    node.inputs.push_back(v.index);
    node.requires_grad = node.requires_grad || nodes_[v.index].requires_grad;
  }
  node.params = std::move(params);
  node.shape = output.shape();
  node.value = std::move(output);
  node.backward = std::move(backward);
  node.saves = saves;
  retained_bytes_ += node.shape.bytes();
  nodes_.push_back(std::move(node));
  leaf_grads_.emplace_back();
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  const TapeNode& node = nodes_.at(v.index);
  if (!node.live) {
    throw std::logic_error("activation of " + describe(v.index, node) + " has been released");
  }
  return node.value;
}

void Tape::release(Var v, ReconstructFn reconstruct) {
  TapeNode& node = nodes_.at(v.index);
  if (node.live && node.retained) retained_bytes_ -= node.shape.bytes();
  node.value.release();
  node.live = false;
  node.retained = false;
  node.reconstruct = std::move(reconstruct);
}

void Tape::prune(std::size_t begin, const std::vector<Var>& keep) {
  std::vector<bool> needed(nodes_.size(), false);
  for (const Var& v : keep) needed.at(v.index) = true;
  for (std::size_t j = begin; j < nodes_.size(); ++j) {
    if (nodes_[j].saves.inputs) {
      for (std::size_t in : nodes_[j].inputs) needed[in] = true;
    }
  }
  for (std::size_t i = begin; i < nodes_.size(); ++i) {
    const TapeNode& node = nodes_[i];
    if (needed[i] || node.leaf || node.saves.output || !node.live) continue;
    release({this, i}, nullptr);
  }
}

const Tensor& Tape::materialize(std::size_t index) {
  TapeNode& node = nodes_.at(index);
  if (node.live) return node.value;
  if (!node.reconstruct) {
    throw std::runtime_error("backprop needs the activation of " + describe(index, node) +
                             ", which was released without a reconstruction callback");
  }
  Tensor value = node.reconstruct();
  if (value.shape() != node.shape) {
    throw std::runtime_error("reconstruction of " + describe(index, node) + " produced " +
                             value.shape().to_string() + ", expected " +
                             node.shape.to_string());
  }
  node.value = std::move(value);
  node.live = true;
  reconstructed_.push_back(index);
  ++stats_.reconstructions;
  return node.value;
}

void Tape::backward(Var loss) {
  const Shape& s = shape(loss);
  if (s.element_count() != 1) {
    throw std::invalid_argument("backprop: loss must be a scalar, got shape " + s.to_string());
  }
  backward(loss, Tensor::full(s, 1.0f));
}

void Tape::backward(Var root, Tensor seed) {
  if (root.tape != this) throw std::invalid_argument("backprop: root belongs to another tape");
  if (seed.shape() != nodes_.at(root.index).shape) {
    throw std::invalid_argument("backprop: seed " + seed.shape().to_string() +
                                " does not match root " + nodes_[root.index].shape.to_string());
  }
  stats_ = {};
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  std::int64_t live = seed.bytes();
  std::int64_t peak = live;
  grads[root.index] = std::move(seed);

  for (std::size_t i = root.index + 1; i-- > 0;) {
    if (!grads[i]) continue;
    TapeNode& node = nodes_[i];
    const std::int64_t own_bytes = grads[i]->bytes();
    bool gradient_taken = false;
    if (node.requires_grad && node.backward) {
      BackwardContext ctx(*this, i, *grads[i], grads, live, peak);
      node.backward(ctx);
      gradient_taken = ctx.taken_;
    }
    if (node.leaf && node.requires_grad) {
      leaf_grads_[i] = std::move(grads[i]);
    } else if (!gradient_taken) {
      live -= own_bytes;
    }
    grads[i].reset();
    if (!node.retained && node.live) {
      node.value.release();
      node.live = false;
    }
  }
  for (std::size_t index : reconstructed_) {
    TapeNode& node = nodes_[index];
    if (!node.retained && node.live) {
      node.value.release();
      node.live = false;
    }
  }
  reconstructed_.clear();
  stats_.peak_gradient_bytes = peak;
  stats_.final_gradient_bytes = 0;
  for (const auto& g : grads) {
    if (g) stats_.final_gradient_bytes += g->bytes();
  }
}

const Tensor* Tape::grad(Var v) const {
  const auto& g = leaf_grads_.at(v.index);
  return g ? &*g : nullptr;
}

Tensor Tape::take_grad(Var v) {
  auto& g = leaf_grads_.at(v.index);
  if (!g) return Tensor::zeros(nodes_.at(v.index).shape);
  Tensor out = std::move(*g);
  g.reset();
  return out;
}

Tensor Tape::take_value(Var v) {
  TapeNode& node = nodes_.at(v.index);
  if (!node.live) throw std::logic_error("take_value: " + describe(v.index, node) + " released");
  if (node.retained) retained_bytes_ -= node.shape.bytes();
  Tensor out = std::move(node.value);
  node.value = Tensor();
  node.live = false;
  node.retained = false;
  return out;
}

BackwardContext::BackwardContext(Tape& tape, std::size_t index, Tensor& grad,
                                 std::vector<std::optional<Tensor>>& grads,
                                 std::int64_t& live_bytes, std::int64_t& peak_bytes)
    : tape_(tape),
      index_(index),
      node_(tape.nodes_[index]),
      grad_(grad),
      grads_(grads),
      live_bytes_(live_bytes),
      peak_bytes_(peak_bytes) {}

Tensor BackwardContext::take_grad_output() {
  if (taken_) throw std::logic_error("backward of " + node_.op + " took its gradient twice");
  taken_ = true;
  live_bytes_ -= grad_.bytes();
  Tensor out = std::move(grad_);
  grad_ = Tensor();
  return out;
}

Tensor BackwardContext::take_output() {
  tape_.materialize(index_);
  TapeNode& node = tape_.nodes_[index_];
  if (node.retained) tape_.retained_bytes_ -= node.shape.bytes();
  Tensor out = std::move(node.value);
  node.value = Tensor();
  node.live = false;
  node.retained = false;
  return out;
}

void BackwardContext::provide_input(std::size_t i, Tensor value) {
  const std::size_t target = node_.inputs.at(i);
  TapeNode& node = tape_.nodes_[target];
  if (node.live || !node.saves.output) return;
  if (value.shape() != node.shape) {
    throw std::logic_error("backward of " + node_.op + " provided " + value.shape().to_string() +
                           " for input of shape " + node.shape.to_string());
  }
  node.value = std::move(value);
  node.live = true;
  tape_.reconstructed_.push_back(target);
}

const Tensor& BackwardContext::input(std::size_t i) {
  return tape_.materialize(node_.inputs.at(i));
}

const Tensor& BackwardContext::output() { return tape_.materialize(index_); }

bool BackwardContext::needs_input_grad(std::size_t i) const {
  return tape_.nodes_[node_.inputs.at(i)].requires_grad;
}

void BackwardContext::add_input_grad(std::size_t i, Tensor grad) {
  const std::size_t target = node_.inputs.at(i);
  const TapeNode& input_node = tape_.nodes_[target];
  if (!input_node.requires_grad) return;
  if (grad.shape() != input_node.shape) {
    throw std::logic_error("backward of " + node_.op + " produced gradient " +
                           grad.shape().to_string() + " for input of shape " +
                           input_node.shape.to_string());
  }
  if (!fault_op().empty() && fault_op() == node_.op) grad *= 1.5f;
  auto& slot = grads_[target];
  live_bytes_ += grad.bytes();
  peak_bytes_ = std::max(peak_bytes_, live_bytes_);
  if (slot) {
    *slot += grad;
    live_bytes_ -= grad.bytes();
  } else {
    slot = std::move(grad);
  }
}

void inject_backward_fault(std::string op) { fault_op() = std::move(op); }

}  // namespace revvolnet
