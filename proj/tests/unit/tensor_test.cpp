// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "revvolnet/allocation.hpp"
#include "revvolnet/kernels.hpp"
#include "revvolnet/memory_model.hpp"
#include "revvolnet/random.hpp"
#include "revvolnet/reference_ops.hpp"
#include "revvolnet/tensor.hpp"

namespace revvolnet {
namespace {

Tensor scalar_tensor(float v) { return Tensor(Shape(1, 1, 1, 1, 1), v); }

TEST(Tensor, DataLengthMatchesElementCount) {
  const Tensor t(Shape(2, 3, 4, 5, 6));
  EXPECT_EQ(static_cast<std::int64_t>(t.data().size()), t.element_count());
  EXPECT_EQ(t.bytes(), 2 * 3 * 4 * 5 * 6 * 4);
}

TEST(Tensor, ZeroExtentIsLegal) {
  const Tensor t(Shape(1, 3, 0, 4, 4));
  EXPECT_EQ(t.element_count(), 0);
  EXPECT_TRUE(t.data().empty());
  const Tensor pooled = kernels::max_pool2(Tensor(Shape(1, 2, 0, 4, 4)));
  EXPECT_EQ(pooled.element_count(), 0);
}

TEST(Tensor, RoundTripsThroughRawFormat) {
  Rng rng(3);
  const Tensor t = random_normal(Shape(1, 2, 3, 4, 5), 1.0f, rng);
  std::stringstream buffer;
  write_tensor(buffer, t);
  EXPECT_EQ(buffer.str().size(), kTensorHeaderBytes + static_cast<std::size_t>(t.bytes()));
  EXPECT_EQ(buffer.str().substr(0, 4), "RVT1");
  const Tensor back = read_tensor(buffer);
  EXPECT_TRUE(bit_equal(t, back));
}

TEST(Tensor, RejectsCorruptHeader) {
  std::stringstream buffer("XXXX0000000000000000");
  EXPECT_THROW(read_tensor(buffer), std::runtime_error);
}

TEST(AllocationCounter, SingleAllocation) {
  const std::int64_t peak = measure_peak([] { Tensor t(Shape(1, 1, 10, 10, 10)); });
  auto& counter = AllocationCounter::instance();
  EXPECT_EQ(peak - counter.live_bytes(), 4000);
}

TEST(AllocationCounter, PeakIsHighWaterNotSum) {
  const std::int64_t base = AllocationCounter::instance().live_bytes();
  const std::int64_t peak = measure_peak([] {
    { Tensor a(Shape(1, 1, 10, 10, 10)); }
    { Tensor b(Shape(1, 1, 10, 10, 10)); }
  });
  EXPECT_EQ(peak - base, 4000);
}

TEST(Conv3d, ScalarProduct) {
  const Tensor out =
      kernels::conv3d(scalar_tensor(2.0f), scalar_tensor(3.0f), scalar_tensor(0.0f), {});
  ASSERT_EQ(out.element_count(), 1);
  EXPECT_FLOAT_EQ(out[0], 6.0f);
}

TEST(Conv3d, ZeroInputGivesBias) {
  Rng rng(1);
  const Tensor weight = random_normal(Shape(2, 3, 3, 3, 3), 1.0f, rng);
  Tensor bias(Shape(1, 2, 1, 1, 1));
  bias[0] = 0.5f;
  bias[1] = -1.5f;
  const Tensor out =
      kernels::conv3d(Tensor(Shape(1, 3, 4, 4, 4)), weight, bias, kernels::same_padding(weight.shape()));
  for (std::int64_t i = 0; i < 64; ++i) {
    EXPECT_FLOAT_EQ(out[i], 0.5f);
    EXPECT_FLOAT_EQ(out[64 + i], -1.5f);
  }
}

TEST(Conv3d, OnesCubeCentreAndCorner) {
  const Tensor input(Shape(1, 1, 3, 3, 3), 1.0f);
  const Tensor weight(Shape(1, 1, 3, 3, 3), 1.0f);
  const Tensor out =
      kernels::conv3d(input, weight, Tensor(Shape(1, 1, 1, 1, 1)), kernels::same_padding(weight.shape()));
  EXPECT_FLOAT_EQ(out.at(0, 0, 1, 1, 1), 27.0f);
  EXPECT_FLOAT_EQ(out.at(0, 0, 0, 0, 0), 8.0f);
  EXPECT_FLOAT_EQ(out.at(0, 0, 2, 2, 2), 8.0f);
}

TEST(Conv3d, MatchesDirectLoopOracle) {
  Rng rng(5);
  const Tensor input = random_normal(Shape(2, 3, 5, 4, 6), 1.0f, rng);
  const Tensor weight = random_normal(Shape(4, 3, 3, 3, 3), 1.0f, rng);
  const Tensor bias = random_normal(Shape(1, 4, 1, 1, 1), 1.0f, rng);
  const kernels::Padding pad = kernels::same_padding(weight.shape());
  const Tensor out = kernels::conv3d(input, weight, bias, pad);
  const auto ref = reference::conv3d(reference::from_tensor(input), reference::from_tensor(weight),
                                     reference::from_tensor(bias), pad);
  EXPECT_LT(reference::relative_difference(out, ref), 1e-5);
}

TEST(Conv1x1x1, IdentityKernel) {
  Rng rng(2);
  const Tensor input = random_normal(Shape(1, 3, 2, 2, 2), 1.0f, rng);
  Tensor weight(Shape(3, 3, 1, 1, 1));
  for (int c = 0; c < 3; ++c) weight[c * 3 + c] = 1.0f;
  const Tensor out = kernels::conv3d(input, weight, Tensor(Shape(1, 3, 1, 1, 1)), {});
  EXPECT_TRUE(bit_equal(out, input));
}

TEST(Conv1x1x1, HandMatrixMultiply) {
  Tensor input(Shape(1, 2, 1, 1, 1));
  input[0] = 1.0f;
  input[1] = 2.0f;
  Tensor weight(Shape(2, 2, 1, 1, 1));
  weight[0] = 1.0f;
  weight[1] = 1.0f;
  weight[2] = 1.0f;
  weight[3] = -1.0f;
  const Tensor out = kernels::conv3d(input, weight, Tensor(Shape(1, 2, 1, 1, 1)), {});
  EXPECT_FLOAT_EQ(out[0], 3.0f);
  EXPECT_FLOAT_EQ(out[1], -1.0f);
}

TEST(GroupNorm, ConstantInputGivesZero) {
  const Tensor input(Shape(1, 4, 2, 2, 2), 3.5f);
  const Tensor out = kernels::group_norm(input, Tensor(Shape(1, 4, 1, 1, 1), 1.0f),
                                         Tensor(Shape(1, 4, 1, 1, 1)), 2, 1e-5f, nullptr);
  for (float v : out.data()) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(GroupNorm, TwoValues) {
  Tensor input(Shape(1, 1, 1, 1, 2));
  input[0] = 1.0f;
  input[1] = 3.0f;
  const Tensor out = kernels::group_norm(input, Tensor(Shape(1, 1, 1, 1, 1), 1.0f),
                                         Tensor(Shape(1, 1, 1, 1, 1)), 1, 0.0f, nullptr);
  EXPECT_FLOAT_EQ(out[0], -1.0f);
  EXPECT_FLOAT_EQ(out[1], 1.0f);
}

TEST(GroupNorm, ZeroGammaGivesBeta) {
  Rng rng(4);
  const Tensor input = random_normal(Shape(2, 4, 2, 2, 2), 1.0f, rng);
  Tensor beta(Shape(1, 4, 1, 1, 1));
  for (int c = 0; c < 4; ++c) beta[c] = 0.25f * static_cast<float>(c);
  const Tensor out =
      kernels::group_norm(input, Tensor(Shape(1, 4, 1, 1, 1)), beta, 2, 1e-5f, nullptr);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 4; ++c)
      for (std::int64_t i = 0; i < 8; ++i) {
        EXPECT_FLOAT_EQ(out[(n * 4 + c) * 8 + i], beta[c]);
      }
}

TEST(LeakyRelu, Branches) {
  EXPECT_FLOAT_EQ(kernels::leaky_relu(scalar_tensor(1.0f), 0.01f)[0], 1.0f);
  EXPECT_FLOAT_EQ(kernels::leaky_relu(scalar_tensor(-2.0f), 0.01f)[0], -0.02f);
  const Tensor g = kernels::leaky_relu_backward(scalar_tensor(-2.0f), scalar_tensor(1.0f), 0.01f);
  EXPECT_FLOAT_EQ(g[0], 0.01f);
  const double h = 1e-3;
  const double numeric = (0.01 * (-2.0 + h) - 0.01 * (-2.0 - h)) / (2 * h);
  EXPECT_NEAR(g[0], numeric, 1e-4);
}

TEST(MaxPool, ConstantAndMaximum) {
  const Tensor constant(Shape(1, 1, 2, 2, 2), 4.25f);
  EXPECT_FLOAT_EQ(kernels::max_pool2(constant)[0], 4.25f);
  Tensor scan(Shape(1, 1, 2, 2, 2));
  for (int i = 0; i < 8; ++i) scan[i] = static_cast<float>(i + 1);
  EXPECT_FLOAT_EQ(kernels::max_pool2(scan)[0], 8.0f);
}

TEST(MaxPool, TiesRouteToFirstInScanOrder) {
  const Tensor ties(Shape(1, 1, 2, 2, 2), 5.0f);
  const Tensor g = kernels::max_pool2_backward(ties, scalar_tensor(2.5f));
  EXPECT_FLOAT_EQ(g[0], 2.5f);
  float total = 0.0f;
  for (float v : g.data()) total += v;
  EXPECT_FLOAT_EQ(total, 2.5f);
}

TEST(Upsample, ConstantStaysConstant) {
  const Tensor out = kernels::upsample2(Tensor(Shape(1, 2, 2, 3, 2), 1.75f));
  EXPECT_EQ(out.shape(), Shape(1, 2, 4, 6, 4));
  for (float v : out.data()) EXPECT_FLOAT_EQ(v, 1.75f);
}

TEST(Upsample, BackwardPreservesMass) {
  const Tensor input(Shape(1, 2, 3, 2, 4));
  const Tensor g = kernels::upsample2_backward(Tensor(kernels::upsample2(input).shape(), 1.0f));
  double per_channel = 0.0;
  for (std::int64_t i = 0; i < 24; ++i) per_channel += g[i];
  EXPECT_DOUBLE_EQ(per_channel, 8.0 * 24.0);
}

TEST(Upsample, HalfPixelWeights) {
  Tensor input(Shape(1, 1, 1, 1, 2));
  input[1] = 1.0f;
  const Tensor out = kernels::upsample2(input);
  ASSERT_EQ(out.shape(), Shape(1, 1, 2, 2, 4));
  const float expected[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (int x = 0; x < 4; ++x) EXPECT_FLOAT_EQ(out.at(0, 0, 1, 1, x), expected[x]);
}

TEST(ConcatSlice, InversePair) {
  Rng rng(6);
  const Tensor a = random_normal(Shape(2, 2, 3, 3, 3), 1.0f, rng);
  const Tensor b = random_normal(Shape(2, 3, 3, 3, 3), 1.0f, rng);
  const Tensor ab = kernels::concat_channels(a, b);
  EXPECT_EQ(ab.shape().channels(), 5);
  EXPECT_TRUE(bit_equal(kernels::slice_channels(ab, 0, 2), a));
  EXPECT_TRUE(bit_equal(kernels::slice_channels(ab, 2, 5), b));
}

TEST(Sigmoid, ValuesAndGradient) {
  EXPECT_FLOAT_EQ(kernels::sigmoid(scalar_tensor(0.0f))[0], 0.5f);
  EXPECT_NEAR(kernels::sigmoid(scalar_tensor(40.0f))[0], 1.0, 1e-12);
  const Tensor out = kernels::sigmoid(scalar_tensor(0.0f));
  const float g = kernels::sigmoid_backward(out, scalar_tensor(1.0f))[0];
  EXPECT_FLOAT_EQ(g, 0.25f);
  const double h = 1e-3;
  const double numeric = (1.0 / (1.0 + std::exp(-h)) - 1.0 / (1.0 + std::exp(h))) / (2 * h);
  EXPECT_NEAR(g, numeric, 1e-5);
}

}  // namespace
}  // namespace revvolnet
