// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Untaped forward and backward kernels for the primitive operations. The tape
// layer in ops.hpp wraps these; the reversible blocks call them directly when
// activations must not be recorded.

#pragma once

#include <cstdint>
#include <vector>

#include "revvolnet/tensor.hpp"

namespace revvolnet::kernels {

struct Padding {
  std::int64_t depth = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
};

/// Padding that keeps spatial extents unchanged. Rejects even kernel extents.
Padding same_padding(const Shape& kernel_shape);

// Convolution, stride 1. weight is (out_ch, in_ch, kd, kh, kw), bias (out_ch).
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, Padding pad);
Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight,
                             const Shape& input_shape, Padding pad);
/// Adds dL/dweight and dL/dbias into the given accumulators.
void conv3d_accumulate_param_grads(const Tensor& input, const Tensor& grad_out, Padding pad,
                                   Tensor& grad_weight, Tensor& grad_bias);

/// Per (batch, group) statistics saved by the forward pass.
struct GroupNormStats {
  std::vector<double> mean;
  std::vector<double> inv_std;
};

Tensor group_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  std::int64_t group_size, float epsilon, GroupNormStats* stats = nullptr);
/// Returns dL/dinput and adds dL/dgamma, dL/dbeta into the accumulators.
Tensor group_norm_backward(const Tensor& input, const Tensor& gamma, std::int64_t group_size,
                           const GroupNormStats& stats, const Tensor& grad_out,
                           Tensor& grad_gamma, Tensor& grad_beta);

Tensor leaky_relu(const Tensor& input, float slope);
Tensor leaky_relu_backward(const Tensor& input, const Tensor& grad_out, float slope);
void leaky_relu_inplace(Tensor& values, float slope);
/// `activation` may be the input or the output: for a positive slope both
/// have the same sign pattern.
void leaky_relu_backward_inplace(const Tensor& activation, Tensor& grad, float slope);

Tensor max_pool2(const Tensor& input);
/// Routes each window's gradient to its first maximum in scan order.
Tensor max_pool2_backward(const Tensor& input, const Tensor& grad_out);

/// Trilinear x2 upsampling, half-pixel (align-corners false) sampling.
Tensor upsample2(const Tensor& input);
Tensor upsample2_backward(const Tensor& grad_out);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Channels [begin, end) of input.
Tensor slice_channels(const Tensor& input, std::int64_t begin, std::int64_t end);

Tensor sigmoid(const Tensor& input);
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out);

/// Sum of all elements accumulated in double.
double sum(const Tensor& input);

}  // namespace revvolnet::kernels
