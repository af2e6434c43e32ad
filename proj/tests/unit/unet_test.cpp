// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "revvolnet/random.hpp"
#include "revvolnet/unet.hpp"

namespace revvolnet {
namespace {

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k) {
  return in * out * k * k * k + out;
}
std::int64_t norm_params(std::int64_t c) { return 2 * c; }
std::int64_t unit_params(std::int64_t in, std::int64_t out) {
  return norm_params(in) + conv_params(in, out, 3);
}

// Hand-derived layer table of the conventional network: a 3x3x3 input conv
// and one unit at level 0, two units per deeper encoder level (the bottom
// level narrows back), two per decoder level and a pointwise head.
std::int64_t baseline_closed_form(const std::vector<std::int64_t>& w) {
  const std::size_t depth = w.size();
  std::int64_t total = conv_params(4, w[0], 3) + unit_params(w[0], w[0]);
  for (std::size_t i = 1; i < depth; ++i) {
    const std::int64_t out = i == depth - 1 ? w[i - 1] : w[i];
    total += unit_params(w[i - 1], w[i]) + unit_params(w[i], out);
  }
  for (std::size_t i = 0; i + 1 < depth; ++i) {
    total += unit_params(w[i], w[i]) + unit_params(w[i], i > 0 ? w[i - 1] : w[i]);
  }
  return total + conv_params(w[0], 3, 1);
}

// Reversible counterpart: pointwise stem, widen and narrow convs, and per
// block two F/G units on half the width.
std::int64_t reversible_closed_form(const std::vector<std::int64_t>& w, std::int64_t enc,
                                    std::int64_t dec) {
  auto block = [](std::int64_t c) { return 2 * unit_params(c / 2, c / 2); };
  std::int64_t total = conv_params(4, w[0], 1) + conv_params(w[0], 3, 1);
  for (std::size_t i = 0; i < w.size(); ++i) {
    total += (enc + dec) * block(w[i]);
    if (i > 0) total += conv_params(w[i - 1], w[i], 1) + conv_params(w[i], w[i - 1], 1);
  }
  return total;
}

// Batch is the outermost axis, so stacking is concatenation of the data.
Tensor stack_batch(const Tensor& a, const Tensor& b) {
  Shape shape = a.shape();
  shape.dims[0] += b.shape().batch();
  Tensor out(shape);
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.element_count());
  return out;
}

ArchitectureSpec tiny(std::vector<std::int64_t> levels, std::int64_t group_size = 2) {
  ArchitectureSpec spec;
  spec.levels = std::move(levels);
  spec.group_size = group_size;
  return spec;
}

TEST(ParameterCount, SingleConvAndNorm) {
  EXPECT_EQ(conv_params(1, 1, 3), 28);
  EXPECT_EQ(norm_params(6), 12);
  Layer conv;
  ParameterRegistry registry;
  conv.weight = &registry.create("w", Tensor(Shape(1, 1, 3, 3, 3)));
  conv.bias = &registry.create("b", Tensor(Shape(1, 1, 1, 1, 1)));
  EXPECT_EQ(conv.parameter_count(), 28);
}

TEST(ParameterCount, BaselineMatchesBudget) {
  const Network network(baseline_spec());
  EXPECT_EQ(network.parameter_count(), baseline_closed_form({30, 60, 120, 240, 480}));
  EXPECT_EQ(network.parameter_count(), 12427503);
  EXPECT_NEAR(static_cast<double>(network.parameter_count()) / 12.5e6, 1.0, 0.05);
}

TEST(ParameterCount, ReversibleWithinTwoPercentOfBaseline) {
  const Network baseline(baseline_spec());
  const Network reversible(reversible_spec(1, 1));
  EXPECT_EQ(reversible.parameter_count(),
            reversible_closed_form({60, 120, 240, 360, 480}, 1, 1));
  const double ratio = static_cast<double>(reversible.parameter_count()) /
                       static_cast<double>(baseline.parameter_count());
  EXPECT_NEAR(ratio, 1.0, 0.02);
}

TEST(ParameterCount, DepthAddsWholeBlocks) {
  const std::vector<std::int64_t> w{8, 16, 32};
  for (std::int64_t enc : {1, 2, 4}) {
    ArchitectureSpec spec = tiny(w);
    spec.encoder_blocks = enc;
    EXPECT_EQ(Network(spec).parameter_count(), reversible_closed_form(w, enc, 1));
  }
}

TEST(Architecture, RejectsInvalidSpecs) {
  EXPECT_THROW(tiny({8}).validate(), std::invalid_argument);
  EXPECT_THROW(tiny({8, 14}, 4).validate(), std::invalid_argument);
  EXPECT_THROW(tiny({8, 15}).validate(), std::invalid_argument);
  ArchitectureSpec even_kernel = tiny({8, 16});
  even_kernel.kernel_size = 2;
  EXPECT_THROW(even_kernel.validate(), std::invalid_argument);
  EXPECT_NO_THROW(tiny({8, 16}).validate());
}

TEST(Architecture, TextRoundTrip) {
  const ArchitectureSpec spec = reversible_spec(2, 3);
  EXPECT_EQ(ArchitectureSpec::parse(spec.to_text()), spec);
  EXPECT_THROW(ArchitectureSpec::parse("levels = 8,16\ncolour = blue\n"), std::invalid_argument);
}

TEST(Network, OneSequencePerLevelAndSide) {
  const Network network(tiny({8, 16, 32}));
  int encoder = 0;
  int decoder = 0;
  std::vector<int> per_level(3, 0);
  for (const Layer& layer : network.layers()) {
    if (layer.kind != LayerKind::kSequence) continue;
    (layer.decoder ? decoder : encoder)++;
    per_level[static_cast<std::size_t>(layer.level)]++;
  }
  EXPECT_EQ(encoder, 3);
  EXPECT_EQ(decoder, 3);
  for (int count : per_level) EXPECT_EQ(count, 2);
}

TEST(Network, TinyOutputShape) {
  const Network network(tiny({4, 8}));
  Rng rng(1);
  const Shape input(1, 4, 8, 8, 8);
  EXPECT_EQ(network.output_shape(input), Shape(1, 3, 8, 8, 8));
  Tape tape;
  EXPECT_EQ(network.forward(tape.leaf(random_normal(input, 1.0f, rng))).shape(),
            Shape(1, 3, 8, 8, 8));
}

TEST(Network, RejectsIndivisibleInput) {
  const Network network(tiny({8, 16, 32}));
  try {
    network.check_input(Shape(1, 4, 8, 8, 6));
    FAIL() << "extent 6 should be rejected";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(network.check_input(Shape(1, 3, 8, 8, 8)), std::invalid_argument);
}

TEST(Network, ZeroHeadGivesHalf) {
  Network network(tiny({8, 16}));
  for (Parameter& p : network.registry()) {
    if (p.name.starts_with("head.")) p.value.fill(0.0f);
  }
  Rng rng(2);
  const Tensor out = network.predict(random_normal(Shape(1, 4, 4, 4, 4), 1.0f, rng));
  for (float v : out.data()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Network, BatchDuplicationInvariance) {
  const Network network(tiny({8, 16}), 3);
  Rng rng(3);
  const Tensor v = random_normal(Shape(1, 4, 4, 4, 4), 1.0f, rng);
  const Tensor single = network.predict(v);
  const Tensor doubled = network.predict(stack_batch(v, v));
  const std::int64_t n = single.element_count();
  for (std::int64_t i = 0; i < n; ++i) {
    EXPECT_EQ(doubled[i], single[i]);
    EXPECT_EQ(doubled[n + i], single[i]);
  }
}

TEST(Network, TapedAndUntapedForwardAgree) {
  const Network network(tiny({8, 16, 32}), 4);
  Rng rng(4);
  const Tensor v = random_normal(Shape(2, 4, 8, 8, 8), 1.0f, rng);
  for (ExecutionMode mode : {ExecutionMode::kReversible, ExecutionMode::kStoredActivations}) {
    Tape tape;
    EXPECT_TRUE(bit_equal(network.forward(tape.leaf(v), mode).value(), network.predict(v)));
  }
}

TEST(Network, SaveLoadRoundTrip) {
  const Network network(tiny({8, 16}), 5);
  const auto dir = std::filesystem::temp_directory_path() / "revvolnet_unet_test_ckpt";
  std::filesystem::remove_all(dir);
  network.save(dir.string());
  const Network loaded = Network::load(dir.string());
  EXPECT_EQ(loaded.spec(), network.spec());
  Rng rng(5);
  const Tensor v = random_normal(Shape(1, 4, 4, 4, 4), 1.0f, rng);
  EXPECT_TRUE(bit_equal(loaded.predict(v), network.predict(v)));
  std::filesystem::remove_all(dir);
}

TEST(Network, BaselineHasNoSequences) {
  const Network network(baseline_spec());
  EXPECT_TRUE(network.sequences().empty());
}

}  // namespace
}  // namespace revvolnet
