// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations recorded on a Tape.

#pragma once

#include <cstdint>
#include <utility>

#include "revvolnet/kernels.hpp"
#include "revvolnet/tape.hpp"

namespace revvolnet {

inline constexpr float kLeakyReluSlope = 0.01f;
inline constexpr std::int64_t kGroupSize = 10;
inline constexpr float kGroupNormEpsilon = 1e-5f;

Var conv3d(Var input, Parameter& weight, Parameter& bias, kernels::Padding pad);
/// Convolution with odd kernel extents and padding that preserves extents.
Var conv3d_same(Var input, Parameter& weight, Parameter& bias);
/// Pointwise channel mixing; the kernel must be (out, in, 1, 1, 1).
Var conv1x1x1(Var input, Parameter& weight, Parameter& bias);

Var group_norm(Var input, Parameter& gamma, Parameter& beta,
               std::int64_t group_size = kGroupSize, float epsilon = kGroupNormEpsilon);
Var leaky_relu(Var input, float slope = kLeakyReluSlope);
Var max_pool2(Var input);
Var upsample2(Var input);
Var sigmoid(Var input);

Var concat_channels(Var a, Var b);
Var slice_channels(Var input, std::int64_t begin, std::int64_t end);
/// Channels [0, at) and [at, C). Requires 0 < at < C.
std::pair<Var, Var> split_channels(Var input, std::int64_t at);

Var add(Var a, Var b);
Var sub(Var a, Var b);

/// Scalar sum of all elements.
Var sum(Var input);
/// Scalar sum of weights[i] * input[i]; used to probe gradients.
Var weighted_sum(Var input, const Tensor& weights);

}  // namespace revvolnet
