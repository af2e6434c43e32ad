// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "revvolnet/ops.hpp"
#include "revvolnet/random.hpp"
#include "revvolnet/reference_ops.hpp"

namespace revvolnet {
namespace {

TEST(Ops, ConcatSliceGradientRoundTrip) {
  Rng rng(1);
  const Tensor a = random_normal(Shape(1, 2, 2, 2, 2), 1.0f, rng);
  const Tensor b = random_normal(Shape(1, 3, 2, 2, 2), 1.0f, rng);
  const Tensor seed = random_normal(Shape(1, 5, 2, 2, 2), 1.0f, rng);
  Tape tape;
  Var va = tape.leaf(a, true);
  Var vb = tape.leaf(b, true);
  auto [left, right] = split_channels(concat_channels(va, vb), 2);
  EXPECT_TRUE(bit_equal(left.value(), a));
  EXPECT_TRUE(bit_equal(right.value(), b));
  tape.backward(concat_channels(left, right), seed);
  EXPECT_TRUE(bit_equal(*tape.grad(va), kernels::slice_channels(seed, 0, 2)));
  EXPECT_TRUE(bit_equal(*tape.grad(vb), kernels::slice_channels(seed, 2, 5)));
}

TEST(Ops, PointwiseConvMatchesKernelOneConv) {
  Rng rng(2);
  ParameterRegistry registry;
  Parameter& w = registry.create("w", random_normal(Shape(5, 3, 1, 1, 1), 1.0f, rng));
  Parameter& b = registry.create("b", random_normal(Shape(1, 5, 1, 1, 1), 1.0f, rng));
  const Tensor x = random_normal(Shape(2, 3, 3, 4, 5), 1.0f, rng);
  Tape tape;
  Var in = tape.leaf(x);
  const Tensor pointwise = conv1x1x1(in, w, b).value();
  const Tensor general = conv3d(in, w, b, {}).value();
  EXPECT_LT(max_abs_diff(pointwise, general), 1e-5f);
  EXPECT_THROW(conv1x1x1(in, registry.create("k3", Tensor(Shape(5, 3, 3, 3, 3))), b),
               std::invalid_argument);
}

TEST(Ops, ElementwiseGradients) {
  Tape tape;
  Tensor values(Shape(1, 1, 1, 1, 2));
  values[0] = -2.0f;
  values[1] = 0.0f;
  Var x = tape.leaf(values, true);
  Var y = tape.leaf(values, true);
  tape.backward(add(sum(leaky_relu(x, 0.01f)), sum(sigmoid(y))));
  EXPECT_FLOAT_EQ((*tape.grad(x))[0], 0.01f);
  EXPECT_FLOAT_EQ((*tape.grad(y))[1], 0.25f);
}

TEST(Ops, SubtractionGradientSigns) {
  Rng rng(3);
  const Shape shape(1, 2, 2, 2, 2);
  Tape tape;
  Var a = tape.leaf(random_normal(shape, 1.0f, rng), true);
  Var b = tape.leaf(random_normal(shape, 1.0f, rng), true);
  tape.backward(sum(sub(a, b)));
  for (float v : tape.grad(a)->data()) EXPECT_FLOAT_EQ(v, 1.0f);
  for (float v : tape.grad(b)->data()) EXPECT_FLOAT_EQ(v, -1.0f);
}

TEST(Ops, GroupNormMatchesReference) {
  Rng rng(4);
  ParameterRegistry registry;
  Parameter& gamma = registry.create("g", random_normal(Shape(1, 6, 1, 1, 1), 1.0f, rng));
  Parameter& beta = registry.create("b", random_normal(Shape(1, 6, 1, 1, 1), 1.0f, rng));
  const Tensor x = random_normal(Shape(2, 6, 3, 3, 3), 2.0f, rng);
  Tape tape;
  const Tensor out = group_norm(tape.leaf(x), gamma, beta, 3).value();
  const auto ref = reference::group_norm(reference::from_tensor(x),
                                         reference::from_tensor(gamma.value),
                                         reference::from_tensor(beta.value), 3, 1e-5);
  EXPECT_LT(reference::relative_difference(out, ref), 1e-5);
}

TEST(Ops, RejectsMismatchedShapes) {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape(1, 2, 2, 2, 2)));
  Var b = tape.leaf(Tensor(Shape(1, 2, 4, 2, 2)));
  EXPECT_THROW(add(a, b), std::invalid_argument);
  EXPECT_THROW(concat_channels(a, b), std::invalid_argument);
  EXPECT_THROW(max_pool2(tape.leaf(Tensor(Shape(1, 1, 3, 2, 2)))), std::invalid_argument);
}

}  // namespace
}  // namespace revvolnet
