// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/random.hpp"

#include <cmath>

namespace revvolnet {

Tensor random_normal(const Shape& shape, float stddev, Rng& rng) {
  Tensor out(shape);
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& v : out.data()) v = dist(rng);
  return out;
}

Tensor random_uniform(const Shape& shape, float lo, float hi, Rng& rng) {
  Tensor out(shape);
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& v : out.data()) v = dist(rng);
  return out;
}

Tensor he_normal(const Shape& kernel_shape, Rng& rng) {
  const std::int64_t fan_in = kernel_shape.dims[1] * kernel_shape.spatial();
  const float stddev = fan_in > 0 ? std::sqrt(2.0f / static_cast<float>(fan_in)) : 0.0f;
  return random_normal(kernel_shape, stddev, rng);
}

}  // namespace revvolnet
