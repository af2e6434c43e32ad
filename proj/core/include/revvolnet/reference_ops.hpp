// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Direct-loop double-precision forwards of the primitive operations. They
// serve as oracles: the float kernels are compared against them, and
// finite differences are taken through them so float rounding in the
// forward does not swamp the derivative.

#pragma once

#include <cstdint>
#include <vector>

#include "revvolnet/kernels.hpp"
#include "revvolnet/tensor.hpp"

namespace revvolnet::reference {

struct Array {
  Shape shape;
  std::vector<double> values;

  Array() = default;
  explicit Array(const Shape& s, double fill = 0.0)
      : shape(s), values(static_cast<std::size_t>(s.element_count()), fill) {}

  double& at(std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x);
  double at(std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) const;
};

Array from_tensor(const Tensor& t);
Tensor to_tensor(const Array& a);
/// max |a - b| / max(max |b|, 1e-30).
double relative_difference(const Tensor& a, const Array& b);

Array conv3d(const Array& input, const Array& weight, const Array& bias, kernels::Padding pad);
Array group_norm(const Array& input, const Array& gamma, const Array& beta,
                 std::int64_t group_size, double epsilon);
Array leaky_relu(const Array& input, double slope);
Array max_pool2(const Array& input);
Array upsample2(const Array& input);
Array sigmoid(const Array& input);
Array concat_channels(const Array& a, const Array& b);
Array slice_channels(const Array& input, std::int64_t begin, std::int64_t end);
Array add(const Array& a, const Array& b);
Array sub(const Array& a, const Array& b);
Array sum(const Array& input);
Array weighted_sum(const Array& input, const Array& weights);
Array dice_loss(const Array& pred, const Array& target, double epsilon);

}  // namespace revvolnet::reference
