// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/reversible.hpp"

#include <stdexcept>
#include <tuple>

namespace revvolnet {

ResidualFunction::ResidualFunction(ParameterRegistry& registry, const std::string& name,
                                   std::int64_t channels, const ResidualSettings& settings,
                                   Rng& rng)
    : channels_(channels), settings_(settings) {
  if (channels <= 0) throw std::invalid_argument(name + ": channel count must be positive");
  if (channels % settings.group_size != 0) {
    throw std::invalid_argument(name + ": " + std::to_string(channels) +
                                " channels not divisible by group size " +
                                std::to_string(settings.group_size));
  }
  const std::int64_t k = settings.kernel_size;
  const Shape kernel(channels, channels, k, k, k);
  pad_ = kernels::same_padding(kernel);
  gamma_ = &registry.create(name + ".norm.gamma", Tensor::full(Shape(1, channels, 1, 1, 1), 1.0f));
  beta_ = &registry.create(name + ".norm.beta", Tensor::zeros(Shape(1, channels, 1, 1, 1)));
  weight_ = &registry.create(name + ".conv.weight", he_normal(kernel, rng));
  bias_ = &registry.create(name + ".conv.bias", Tensor::zeros(Shape(1, channels, 1, 1, 1)));
}

Tensor ResidualFunction::apply(const Tensor& input) const {
  Tensor t = kernels::group_norm(input, gamma_->value, beta_->value, settings_.group_size,
                                 settings_.epsilon);
  kernels::leaky_relu_inplace(t, settings_.slope);
  return kernels::conv3d(t, weight_->value, bias_->value, pad_);
}

Tensor ResidualFunction::subtract_and_backward(const Tensor& input, Tensor& target,
                                               const Tensor& grad_output) const {
  kernels::GroupNormStats stats;
  Tensor t = kernels::group_norm(input, gamma_->value, beta_->value, settings_.group_size,
                                 settings_.epsilon, &stats);
  kernels::leaky_relu_inplace(t, settings_.slope);
  target -= kernels::conv3d(t, weight_->value, bias_->value, pad_);

  kernels::conv3d_accumulate_param_grads(t, grad_output, pad_, weight_->grad, bias_->grad);
  Tensor g = kernels::conv3d_backward_input(grad_output, weight_->value, t.shape(), pad_);
  kernels::leaky_relu_backward_inplace(t, g, settings_.slope);
  t.release();
  return kernels::group_norm_backward(input, gamma_->value, settings_.group_size, stats, g,
                                      gamma_->grad, beta_->grad);
}

Var ResidualFunction::record(Var input) const {
  Var t = group_norm(input, *gamma_, *beta_, settings_.group_size, settings_.epsilon);
  t = leaky_relu(t, settings_.slope);
  return conv3d(t, *weight_, *bias_, pad_);
}

namespace {

std::int64_t half_width(const std::string& name, std::int64_t channels) {
  if (channels <= 0 || channels % 2 != 0) {
    throw std::invalid_argument(name + ": reversible width " + std::to_string(channels) +
                                " must be even and positive");
  }
  return channels / 2;
}

void check_halves(const Tensor& a, const Tensor& b, std::int64_t half, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": halves differ, " + a.shape().to_string() +
                                " vs " + b.shape().to_string());
  }
  if (a.shape().channels() != half) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(half) +
                                " channels per half, got " + a.shape().to_string());
  }
}

}  // namespace

ReversibleBlock::ReversibleBlock(ParameterRegistry& registry, const std::string& name,
                                 std::int64_t channels, const ResidualSettings& settings, Rng& rng)
    : f_(registry, name + ".F", half_width(name, channels), settings, rng),
      g_(registry, name + ".G", channels / 2, settings, rng) {}

std::pair<Tensor, Tensor> ReversibleBlock::forward(const Tensor& x1, const Tensor& x2) const {
  check_halves(x1, x2, f_.channels(), "block forward");
  Tensor y1 = x1;
  y1 += f_.apply(x2);
  Tensor y2 = x2;
  y2 += g_.apply(y1);
  return {std::move(y1), std::move(y2)};
}

std::pair<Tensor, Tensor> ReversibleBlock::inverse(const Tensor& y1, const Tensor& y2) const {
  check_halves(y1, y2, f_.channels(), "block inverse");
  Tensor x2 = y2;
  x2 -= g_.apply(y1);
  Tensor x1 = y1;
  x1 -= f_.apply(x2);
  return {std::move(x1), std::move(x2)};
}

BlockBackward ReversibleBlock::backward(Tensor y1, Tensor y2, Tensor grad_y1,
                                        Tensor grad_y2) const {
  check_halves(y1, y2, f_.channels(), "block backward");
  check_halves(grad_y1, grad_y2, f_.channels(), "block backward gradient");
  // x2 = y2 - G(y1); dL/dy1 picks up G's contribution.
  grad_y1 += g_.subtract_and_backward(y1, y2, grad_y2);
  // x1 = y1 - F(x2); dL/dx2 = dL/dy2 + F'(x2)^T dL/dx1.
  grad_y2 += f_.subtract_and_backward(y2, y1, grad_y1);
  return {std::move(y1), std::move(y2), std::move(grad_y1), std::move(grad_y2)};
}

std::pair<Var, Var> ReversibleBlock::record(Var x1, Var x2) const {
  Var y1 = add(x1, f_.record(x2));
  Var y2 = add(x2, g_.record(y1));
  return {y1, y2};
}

std::vector<Parameter*> ReversibleBlock::parameters() const {
  auto out = f_.parameters();
  for (Parameter* p : g_.parameters()) out.push_back(p);
  return out;
}

const char* to_string(ExecutionMode mode) {
  return mode == ExecutionMode::kReversible ? "reversible" : "stored";
}

ReversibleSequence::ReversibleSequence(ParameterRegistry& registry, const std::string& name,
                                       std::int64_t channels, std::int64_t depth,
                                       const ResidualSettings& settings, Rng& rng)
    : channels_(channels) {
  half_width(name, channels);
  if (depth < 0) throw std::invalid_argument(name + ": negative depth");
  blocks_.reserve(static_cast<std::size_t>(depth));
  for (std::int64_t i = 0; i < depth; ++i) {
    blocks_.emplace_back(registry, name + ".block" + std::to_string(i), channels, settings, rng);
  }
}

std::vector<Parameter*> ReversibleSequence::parameters() const {
  std::vector<Parameter*> out;
  for (const auto& b : blocks_) {
    for (Parameter* p : b.parameters()) out.push_back(p);
  }
  return out;
}

std::int64_t ReversibleSequence::parameter_count() const {
  std::int64_t total = 0;
  for (const Parameter* p : parameters()) total += p->value.element_count();
  return total;
}

void ReversibleSequence::check_input(const Shape& shape, const char* what) const {
  if (shape.channels() != channels_) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(channels_) +
                                " channels, got " + shape.to_string());
  }
}

Tensor ReversibleSequence::forward(const Tensor& input) const {
  check_input(input.shape(), "sequence forward");
  if (blocks_.empty()) return input;
  const std::int64_t half = channels_ / 2;
  Tensor a = kernels::slice_channels(input, 0, half);
  Tensor b = kernels::slice_channels(input, half, channels_);
  for (const auto& block : blocks_) {
    a += block.f().apply(b);
    b += block.g().apply(a);
  }
  return kernels::concat_channels(a, b);
}

Tensor ReversibleSequence::inverse(const Tensor& output) const {
  check_input(output.shape(), "sequence inverse");
  if (blocks_.empty()) return output;
  const std::int64_t half = channels_ / 2;
  Tensor a = kernels::slice_channels(output, 0, half);
  Tensor b = kernels::slice_channels(output, half, channels_);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    b -= it->g().apply(a);
    a -= it->f().apply(b);
  }
  return kernels::concat_channels(a, b);
}

Tensor ReversibleSequence::backward(Tensor output, Tensor grad_output, Tensor* input) const {
  check_input(output.shape(), "sequence backward");
  if (grad_output.shape() != output.shape()) {
    throw std::invalid_argument("sequence backward: gradient " + grad_output.shape().to_string() +
                                " vs output " + output.shape().to_string());
  }
  if (blocks_.empty()) {
    if (input) *input = std::move(output);
    return grad_output;
  }
  const std::int64_t half = channels_ / 2;
  Tensor g1 = kernels::slice_channels(grad_output, 0, half);
  Tensor g2 = kernels::slice_channels(grad_output, half, channels_);
  grad_output.release();
  Tensor y1 = kernels::slice_channels(output, 0, half);
  Tensor y2 = kernels::slice_channels(output, half, channels_);
  output.release();
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    BlockBackward step = it->backward(std::move(y1), std::move(y2), std::move(g1), std::move(g2));
    y1 = std::move(step.x1);
    y2 = std::move(step.x2);
    g1 = std::move(step.grad_x1);
    g2 = std::move(step.grad_x2);
  }
  Tensor grad_input = kernels::concat_channels(g1, g2);
  g1.release();
  g2.release();
  if (input) *input = kernels::concat_channels(y1, y2);
  return grad_input;
}

Var ReversibleSequence::forward(Var input, ExecutionMode mode, bool release_input) const {
  check_input(input.shape(), "sequence forward");
  if (blocks_.empty()) return input;
  Tape& tape = *input.tape;
  if (mode == ExecutionMode::kStoredActivations) {
    const std::size_t mark = tape.size();
    auto [a, b] = split_channels(input, channels_ / 2);
    for (const auto& block : blocks_) std::tie(a, b) = block.record(a, b);
    Var result = concat_channels(a, b);
    tape.prune(mark, {result});
    return result;
  }

  Tensor out = forward(input.value());
  auto params = parameters();
  Var result = tape.record(
      "reversible_sequence", {input}, params, std::move(out),
      [this](BackwardContext& ctx) {
        Tensor reconstructed;
        Tensor grad = backward(ctx.take_output(), ctx.take_grad_output(), &reconstructed);
        ctx.provide_input(0, std::move(reconstructed));
        ctx.add_input_grad(0, std::move(grad));
      },
      Saves{false, true});
  if (release_input) {
    tape.release(input, [this, result] { return inverse(result.value()); });
  }
  return result;
}

}  // namespace revvolnet
