// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "revvolnet/training.hpp"

namespace revvolnet {
namespace {

Tensor masks(std::initializer_list<float> values) {
  Tensor t(Shape(1, 1, 1, 1, static_cast<std::int64_t>(values.size())));
  std::int64_t i = 0;
  for (float v : values) t[i++] = v;
  return t;
}

TEST(DiceLoss, PerfectPredictionIsZero) {
  const Tensor g = masks({1, 0, 1, 1});
  EXPECT_NEAR(dice_loss(g, g, 1e-5), 0.0, 1e-9);
}

TEST(DiceLoss, EmptyPredictionAndTargetIsZero) {
  const Tensor z = masks({0, 0, 0});
  EXPECT_NEAR(dice_loss(z, z, 1e-5), 0.0, 1e-12);
}

TEST(DiceLoss, HalfOverlap) {
  // 2 * 1 / (2 + 1) = 2/3 overlap, so the loss is 1/3.
  EXPECT_NEAR(dice_loss(masks({1, 1, 0}), masks({1, 0, 0}), 0.0), 1.0 / 3.0, 1e-12);
}

TEST(DiceLoss, SumsOverRegions) {
  Tensor pred(Shape(1, 3, 1, 1, 2));
  Tensor target(Shape(1, 3, 1, 1, 2));
  target[0] = 1.0f;  // region 0 predicted empty: loss 1
  pred[2] = target[2] = 1.0f;  // region 1 perfect: loss 0
  pred[4] = 1.0f;  // region 2 predicted, target empty: loss 1
  EXPECT_NEAR(dice_loss(pred, target, 0.0), 2.0, 1e-12);
}

TEST(DiceLoss, TapedMatchesPlain) {
  Rng rng(1);
  Tensor p = random_uniform(Shape(2, 3, 2, 2, 2), 0.0f, 1.0f, rng);
  Tensor g(p.shape());
  for (std::int64_t i = 0; i < g.element_count(); i += 3) g[i] = 1.0f;
  Tape tape;
  EXPECT_NEAR(dice_loss(tape.leaf(p), g, 1e-5).value()[0], dice_loss(p, g, 1e-5), 1e-6);
}

TEST(DiceScore, Examples) {
  EXPECT_DOUBLE_EQ(dice_score(masks({1, 1, 0}), masks({1, 1, 0}))[0], 1.0);
  EXPECT_DOUBLE_EQ(dice_score(masks({1, 0, 0}), masks({0, 1, 0}))[0], 0.0);
  EXPECT_DOUBLE_EQ(dice_score(masks({1, 1, 0, 0}), masks({1, 0, 0, 0}))[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(dice_score(masks({1, 1, 0, 0}), masks({0, 1, 1, 0}))[0], 0.5);
  EXPECT_DOUBLE_EQ(dice_score(masks({0, 0}), masks({0, 0}))[0], 1.0);
}

TEST(Standardize, TwoValues) {
  Tensor image(Shape(1, 1, 1, 1, 3));
  image[0] = 2.0f;
  image[1] = 4.0f;
  const Tensor out = standardize(image);
  EXPECT_FLOAT_EQ(out[0], -1.0f);
  EXPECT_FLOAT_EQ(out[1], 1.0f);
  EXPECT_EQ(out[2], 0.0f);
}

TEST(Standardize, KeepsZerosAndIsIdempotent) {
  Rng rng(2);
  Tensor image = random_normal(Shape(2, 4, 4, 4, 4), 3.0f, rng);
  for (std::int64_t i = 0; i < image.element_count(); i += 5) image[i] = 0.0f;
  const Tensor once = standardize(image);
  for (std::int64_t i = 0; i < image.element_count(); i += 5) EXPECT_EQ(once[i], 0.0f);
  EXPECT_LT(max_abs_diff(standardize(once), once), 1e-5f);
}

TEST(Standardize, ReportsEmptyModalities) {
  Tensor image(Shape(1, 2, 2, 2, 2));
  image.at(0, 1, 0, 0, 0) = 3.0f;
  StandardizeReport report;
  standardize(image, &report);
  ASSERT_EQ(report.empty_modalities.size(), 1u);
  EXPECT_EQ(report.empty_modalities[0], std::make_pair(std::int64_t{0}, std::int64_t{0}));
}

LabeledVolume sample_volume(std::uint64_t seed) {
  Rng rng(seed);
  LabeledVolume v = generate_synthetic(rng, 16);
  v.image = standardize(v.image);
  return v;
}

TEST(Augment, NoOpIsIdentity) {
  const LabeledVolume v = sample_volume(3);
  AugmentParams params;
  params.intensity_shift.assign(4, 0.0f);
  const LabeledVolume out = apply_augment(v, params);
  EXPECT_TRUE(bit_equal(out.image, v.image));
  EXPECT_TRUE(bit_equal(out.regions, v.regions));
}

TEST(Augment, DoubleFlipRestores) {
  const LabeledVolume v = sample_volume(4);
  AugmentParams params;
  params.flip = {true, true, true};
  params.intensity_shift.assign(4, 0.0f);
  const LabeledVolume twice = apply_augment(apply_augment(v, params), params);
  EXPECT_TRUE(bit_equal(twice.image, v.image));
  EXPECT_TRUE(bit_equal(twice.regions, v.regions));
}

TEST(Augment, PreservesNestingAndBinaryMasks) {
  const LabeledVolume v = sample_volume(5);
  Rng rng(6);
  for (int draw = 0; draw < 1000; ++draw) {
    const LabeledVolume out = augment(v, rng);
    ASSERT_TRUE(regions_nested(out.regions)) << "draw " << draw;
    for (float m : out.regions.data()) ASSERT_TRUE(m == 0.0f || m == 1.0f);
  }
}

TEST(Adam, ZeroGradientLeavesParameter) {
  ParameterRegistry registry;
  Parameter& p = registry.create("p", Tensor(Shape(1, 1, 1, 1, 2), 0.5f));
  AdamOptimizer adam(registry);
  adam.step(1e-3, 0.0);
  EXPECT_FLOAT_EQ(p.value[0], 0.5f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterRegistry registry;
  Parameter& p = registry.create("p", Tensor(Shape(1, 1, 1, 1, 2), 1.0f));
  p.grad[0] = 3.0f;
  p.grad[1] = -0.2f;
  AdamOptimizer adam(registry);
  adam.step(1e-2, 0.0);
  EXPECT_NEAR(p.value[0], 1.0 - 1e-2, 1e-6);
  EXPECT_NEAR(p.value[1], 1.0 + 1e-2, 1e-6);
}

TEST(Adam, TwoStepRecurrence) {
  ParameterRegistry registry;
  Parameter& p = registry.create("p", Tensor(Shape(1, 1, 1, 1, 1), 1.0f));
  AdamState state{Tensor(p.value.shape()), Tensor(p.value.shape())};
  const double lr = 0.1, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double x = 1.0, m = 0.0, v = 0.0;
  const double grads[] = {0.5, -1.5};
  for (int t = 1; t <= 2; ++t) {
    p.grad[0] = static_cast<float>(grads[t - 1]);
    adam_step(p, state, lr, wd, t);
    const double g = grads[t - 1] + wd * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(p.value[0], x, 1e-6) << "step " << t;
  }
}

TEST(Schedule, StepDrops) {
  const TrainingConfig config;
  EXPECT_DOUBLE_EQ(lr_at(0, config), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(300, config), 2e-5);
  EXPECT_NEAR(lr_at(600, config), 8e-7, 1e-20);
}

TEST(EarlyStop, Examples) {
  std::vector<double> rising;
  for (int i = 0; i < 200; ++i) rising.push_back(0.001 * i);
  EXPECT_FALSE(early_stop(rising, 30, 60));
  EXPECT_TRUE(early_stop(std::vector<double>(90, 0.5), 30, 60));
  EXPECT_FALSE(early_stop(std::vector<double>(89, 0.5), 30, 60));
  EXPECT_FALSE(early_stop(std::vector<double>(29, 0.5), 30, 60));
}

TEST(EarlyStop, MovingAverageWindows) {
  const std::vector<double> avg = moving_average({1, 2, 3, 4}, 2);
  ASSERT_EQ(avg.size(), 3u);
  EXPECT_DOUBLE_EQ(avg[0], 1.5);
  EXPECT_DOUBLE_EQ(avg[2], 3.5);
}

TEST(Synthetic, NestedDeterministicAndEnhancing) {
  const auto a = generate_synthetic_set(9, 5, 16);
  const auto b = generate_synthetic_set(9, 5, 16);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NO_THROW(a[i].validate());
    EXPECT_TRUE(bit_equal(a[i].image, b[i].image));
    EXPECT_TRUE(bit_equal(a[i].regions, b[i].regions));
    double et = 0.0;
    for (std::int64_t z = 0; z < 16; ++z)
      for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) et += a[i].regions.at(0, 2, z, y, x);
    EXPECT_GT(et, 0.0);
  }
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "revvolnet_dataset_test";
  std::filesystem::remove_all(dir);
  Dataset dataset;
  dataset.volumes = generate_synthetic_set(10, 2, 8);
  dataset.ids = {"a", "b"};
  save_dataset(dir.string(), dataset);
  const Dataset loaded = load_dataset(dir.string());
  ASSERT_EQ(loaded.ids, dataset.ids);
  EXPECT_TRUE(bit_equal(loaded.volumes[1].regions, dataset.volumes[1].regions));
  std::filesystem::remove_all(dir);
}

TEST(Config, ParseAndReject) {
  const TrainingConfig config =
      TrainingConfig::parse("initial_lr = 0.001\nlr_drop_epochs = 10,20\nmax_epochs = 5\n");
  EXPECT_DOUBLE_EQ(config.initial_lr, 1e-3);
  EXPECT_EQ(config.lr_drop_epochs, (std::vector<std::int64_t>{10, 20}));
  EXPECT_EQ(TrainingConfig::parse(config.to_text()).max_epochs, 5);
  EXPECT_THROW(TrainingConfig::parse("initial_lr = -1\n"), std::invalid_argument);
  EXPECT_THROW(TrainingConfig::parse("learning_rate = 1\n"), std::invalid_argument);
}

ArchitectureSpec tiny_spec() {
  ArchitectureSpec spec;
  spec.levels = {8, 16};
  spec.group_size = 4;
  return spec;
}

TEST(Training, RejectsEmptyDataset) {
  Network network(tiny_spec());
  EXPECT_THROW(train(network, TrainingConfig{}, {}), std::invalid_argument);
}

TEST(Training, ScheduleLogFollowsLrAt) {
  // The schedule is a pure function of the epoch, so the logged rate of a
  // long run equals lr_at on every epoch; checked on the epochs that run.
  Network network(tiny_spec(), 1);
  TrainingConfig config;
  config.lr_drop_epochs = {1, 2};
  config.max_epochs = 3;
  config.validation_fraction = 0.5;
  const TrainingResult result = train(network, config, generate_synthetic_set(2, 2, 8));
  ASSERT_EQ(result.epochs.size(), 3u);
  for (const EpochMetrics& m : result.epochs) EXPECT_DOUBLE_EQ(m.lr, lr_at(m.epoch, config));
  const TrainingConfig defaults;
  for (std::int64_t e = 0; e < 600; ++e) {
    const double expected = e < 250 ? 1e-4 : e < 400 ? 2e-5 : e < 550 ? 4e-6 : 8e-7;
    EXPECT_NEAR(lr_at(e, defaults), expected, expected * 1e-12) << e;
  }
}

TEST(Training, ReversibleAndStoredLossesAgree) {
  const auto data = generate_synthetic_set(3, 3, 8);
  std::vector<double> losses;
  for (ExecutionMode mode : {ExecutionMode::kReversible, ExecutionMode::kStoredActivations}) {
    Network network(tiny_spec(), 2);
    TrainingConfig config;
    config.mode = mode;
    config.max_epochs = 1;
    config.validation_fraction = 0.34;
    losses.push_back(train(network, config, data).epochs[0].train_loss);
  }
  EXPECT_NEAR(losses[0], losses[1], 1e-3);
}

TEST(Training, BestParametersReproduceValidation) {
  const auto data = generate_synthetic_set(4, 4, 8);
  Network network(tiny_spec(), 3);
  TrainingConfig config;
  config.max_epochs = 2;
  config.validation_fraction = 0.5;
  std::ostringstream csv;
  TrainingHooks hooks;
  hooks.metrics = &csv;
  const TrainingResult result = train(network, config, data, hooks);
  restore_parameters(network, result.best_parameters);
  const auto [train_idx, val_idx] = split_indices(data.size(), 0.5, config.seed);
  std::vector<LabeledVolume> validation;
  for (std::size_t i : val_idx) validation.push_back(data[i]);
  const RegionDice again = evaluate(network, validation);
  for (int r = 0; r < 3; ++r)
    EXPECT_EQ(again.per_region[r], result.best_validation.per_region[r]);

  std::istringstream lines(csv.str());
  std::string header;
  std::getline(lines, header);
  for (const char* column : {"epoch", "lr", "train_loss", "val_dice_wt", "val_dice_tc",
                             "val_dice_et", "stored_activation_bytes"}) {
    EXPECT_NE(header.find(column), std::string::npos) << column;
  }
  int rows = 0;
  for (std::string row; std::getline(lines, row);) ++rows;
  EXPECT_EQ(rows, 2);
}

}  // namespace
}  // namespace revvolnet
