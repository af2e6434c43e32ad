// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "revvolnet/tensor.hpp"

namespace revvolnet {

/// All randomness flows from explicitly seeded engines of this type.
using Rng = std::mt19937_64;

Tensor random_normal(const Shape& shape, float stddev, Rng& rng);
Tensor random_uniform(const Shape& shape, float lo, float hi, Rng& rng);

/// He (fan-in) initialization for a convolution kernel (out, in, kd, kh, kw).
Tensor he_normal(const Shape& kernel_shape, Rng& rng);

}  // namespace revvolnet
