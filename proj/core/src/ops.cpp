// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/ops.hpp"

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <string>

namespace revvolnet {

namespace {

constexpr Saves kReadsNothing{false, false};
constexpr Saves kReadsOutput{false, true};

Tensor scalar(double v) { return Tensor::full(Shape(1, 1, 1, 1, 1), static_cast<float>(v)); }

}  // namespace

Var conv3d(Var input, Parameter& weight, Parameter& bias, kernels::Padding pad) {
  Tensor out = kernels::conv3d(input.value(), weight.value, bias.value, pad);
  const Shape input_shape = input.shape();
  Parameter* w = &weight;
  Parameter* b = &bias;
  return input.tape->record(
      "conv3d", {input}, {w, b}, std::move(out),
      [w, b, pad, input_shape](BackwardContext& ctx) {
        const Tensor& x = ctx.input(0);
        kernels::conv3d_accumulate_param_grads(x, ctx.grad_output(), pad, w->grad, b->grad);
        if (ctx.needs_input_grad(0)) {
          ctx.add_input_grad(
              0, kernels::conv3d_backward_input(ctx.grad_output(), w->value, input_shape, pad));
        }
      });
}

Var conv3d_same(Var input, Parameter& weight, Parameter& bias) {
  return conv3d(input, weight, bias, kernels::same_padding(weight.value.shape()));
}

Var conv1x1x1(Var input, Parameter& weight, Parameter& bias) {
  const Shape& k = weight.value.shape();
  if (k.depth() != 1 || k.height() != 1 || k.width() != 1) {
    throw std::invalid_argument("conv1x1x1: kernel " + k.to_string() + " is not 1x1x1");
  }
  return conv3d(input, weight, bias, {});
}

Var group_norm(Var input, Parameter& gamma, Parameter& beta, std::int64_t group_size,
               float epsilon) {
  auto stats = std::make_shared<kernels::GroupNormStats>();
  Tensor out =
      kernels::group_norm(input.value(), gamma.value, beta.value, group_size, epsilon, stats.get());
  Parameter* g = &gamma;
  Parameter* b = &beta;
  return input.tape->record("group_norm", {input}, {g, b}, std::move(out),
                            [g, b, group_size, stats](BackwardContext& ctx) {
                              Tensor gx = kernels::group_norm_backward(
                                  ctx.input(0), g->value, group_size, *stats, ctx.grad_output(),
                                  g->grad, b->grad);
                              ctx.add_input_grad(0, std::move(gx));
                            });
}

Var leaky_relu(Var input, float slope) {
  return input.tape->record("leaky_relu", {input}, {}, kernels::leaky_relu(input.value(), slope),
                            [slope](BackwardContext& ctx) {
                              ctx.add_input_grad(0, kernels::leaky_relu_backward(
                                                        ctx.input(0), ctx.grad_output(), slope));
                            });
}

Var max_pool2(Var input) {
  return input.tape->record("max_pool2", {input}, {}, kernels::max_pool2(input.value()),
                            [](BackwardContext& ctx) {
                              ctx.add_input_grad(0, kernels::max_pool2_backward(
                                                        ctx.input(0), ctx.grad_output()));
                            });
}

Var upsample2(Var input) {
  return input.tape->record(
      "upsample2", {input}, {}, kernels::upsample2(input.value()), [](BackwardContext& ctx) {
        ctx.add_input_grad(0, kernels::upsample2_backward(ctx.grad_output()));
      },
      kReadsNothing);
}

Var sigmoid(Var input) {
  return input.tape->record(
      "sigmoid", {input}, {}, kernels::sigmoid(input.value()), [](BackwardContext& ctx) {
        ctx.add_input_grad(0, kernels::sigmoid_backward(ctx.output(), ctx.grad_output()));
      },
      kReadsOutput);
}

Var concat_channels(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("concat_channels: inputs on different tapes");
  const std::int64_t split = a.shape().channels();
  const std::int64_t total = split + b.shape().channels();
  return a.tape->record("concat_channels", {a, b}, {},
                        kernels::concat_channels(a.value(), b.value()),
                        [split, total](BackwardContext& ctx) {
                          const Tensor& g = ctx.grad_output();
                          if (ctx.needs_input_grad(0)) {
                            ctx.add_input_grad(0, kernels::slice_channels(g, 0, split));
                          }
                          if (ctx.needs_input_grad(1)) {
                            ctx.add_input_grad(1, kernels::slice_channels(g, split, total));
                          }
                        },
                        kReadsNothing);
}

Var slice_channels(Var input, std::int64_t begin, std::int64_t end) {
  const Shape full = input.shape();
  return input.tape->record(
      "slice_channels", {input}, {}, kernels::slice_channels(input.value(), begin, end),
      [full, begin, end](BackwardContext& ctx) {
        const Tensor& g = ctx.grad_output();
        Tensor gx(full);
        const std::int64_t plane = full.spatial();
        const std::int64_t count = (end - begin) * plane;
        for (std::int64_t n = 0; n < full.batch(); ++n) {
          std::copy_n(g.raw() + n * count, count,
                      gx.raw() + (n * full.channels() + begin) * plane);
        }
        ctx.add_input_grad(0, std::move(gx));
      },
      kReadsNothing);
}

std::pair<Var, Var> split_channels(Var input, std::int64_t at) {
  const std::int64_t channels = input.shape().channels();
  if (at <= 0 || at >= channels) {
    throw std::invalid_argument("split_channels: split point " + std::to_string(at) +
                                " must lie strictly inside " + std::to_string(channels) +
                                " channels");
  }
  return {slice_channels(input, 0, at), slice_channels(input, at, channels)};
}

Var add(Var a, Var b) {
  return a.tape->record("add", {a, b}, {}, a.value() + b.value(), [](BackwardContext& ctx) {
    if (ctx.needs_input_grad(0)) ctx.add_input_grad(0, ctx.grad_output());
    if (ctx.needs_input_grad(1)) ctx.add_input_grad(1, ctx.take_grad_output());
  }, kReadsNothing);
}

Var sub(Var a, Var b) {
  return a.tape->record("sub", {a, b}, {}, a.value() - b.value(), [](BackwardContext& ctx) {
    if (ctx.needs_input_grad(0)) ctx.add_input_grad(0, ctx.grad_output());
    if (ctx.needs_input_grad(1)) {
      Tensor g = ctx.grad_output();
      g *= -1.0f;
      ctx.add_input_grad(1, std::move(g));
    }
  }, kReadsNothing);
}

Var sum(Var input) {
  const Shape shape = input.shape();
  return input.tape->record("sum", {input}, {}, scalar(kernels::sum(input.value())),
                            [shape](BackwardContext& ctx) {
                              ctx.add_input_grad(0, Tensor::full(shape, ctx.grad_output()[0]));
                            },
                            kReadsNothing);
}

Var weighted_sum(Var input, const Tensor& weights) {
  if (weights.shape() != input.shape()) {
    throw std::invalid_argument("weighted_sum: weights " + weights.shape().to_string() +
                                " vs input " + input.shape().to_string());
  }
  double acc = 0.0;
  const Tensor& x = input.value();
  for (std::int64_t i = 0; i < x.element_count(); ++i) {
    acc += static_cast<double>(x[i]) * static_cast<double>(weights[i]);
  }
  auto w = std::make_shared<Tensor>(weights);
  return input.tape->record("weighted_sum", {input}, {}, scalar(acc),
                            [w](BackwardContext& ctx) {
                              Tensor g = *w;
                              g *= ctx.grad_output()[0];
                              ctx.add_input_grad(0, std::move(g));
                            },
                            kReadsNothing);
}

}  // namespace revvolnet
