// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Segmentation training: soft Dice over nested regions, Adam with L2 weight
// decay, a stepped learning-rate schedule, moving-average early stopping,
// preprocessing and augmentation, synthetic data and the train/eval loops.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "revvolnet/config.hpp"
#include "revvolnet/random.hpp"
#include "revvolnet/reversible.hpp"
#include "revvolnet/tape.hpp"
#include "revvolnet/unet.hpp"

namespace revvolnet {

inline constexpr std::int64_t kRegionCount = 3;
inline constexpr std::array<const char*, 3> kRegionNames{"wt", "tc", "et"};

struct TrainingConfig {
  double initial_lr = 1e-4;
  std::vector<std::int64_t> lr_drop_epochs{250, 400, 550};
  double lr_drop_factor = 5.0;
  double weight_decay = 1e-5;
  std::int64_t batch_size = 1;
  std::int64_t moving_average_window = 30;
  std::int64_t patience = 60;
  std::uint64_t seed = 0;
  double epsilon_dice = 1e-5;

  /// Hard cap on epochs in addition to early stopping.
  std::int64_t max_epochs = 1000;
  /// Stop as soon as the validation WT Dice reaches this value; 0 disables.
  double target_dice = 0.0;
  double validation_fraction = 0.2;
  bool augment = true;
  ExecutionMode mode = ExecutionMode::kReversible;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  static TrainingConfig from_key_values(const KeyValues& kv);
  static TrainingConfig parse(const std::string& text);
  static TrainingConfig load(const std::string& path);
  std::string to_text() const;
};

/// One subject: image (1, modalities, D, H, W) and binary region masks
/// (1, 3, D, H, W) ordered WT, TC, ET.
struct LabeledVolume {
  Tensor image;
  Tensor regions;

  /// Throws if shapes disagree, masks are not binary or WT ⊇ TC ⊇ ET fails.
  void validate() const;
};

bool regions_nested(const Tensor& regions);

// ---- loss and metrics ------------------------------------------------------

/// Sum over regions of 1 - (2 Σ p g + eps) / (Σ p + Σ g + eps), voxel sums
/// taken over the whole tensor including the batch axis.
double dice_loss(const Tensor& pred, const Tensor& target, double epsilon);
Var dice_loss(Var pred, const Tensor& target, double epsilon);

/// 2|P∩G| / (|P| + |G|) per channel of binary masks; empty/empty scores 1.
std::vector<double> dice_score(const Tensor& pred_binary, const Tensor& target_binary);

/// Voxelwise p > 0.5.
Tensor binarize(const Tensor& probabilities);

// ---- preprocessing and augmentation ------------------------------------------

struct StandardizeReport {
  /// (batch, channel) pairs left unchanged because every voxel is zero.
  std::vector<std::pair<std::int64_t, std::int64_t>> empty_modalities;
};

/// Per sample and modality: zero mean, unit variance over nonzero voxels.
/// Zero voxels stay exactly zero.
Tensor standardize(const Tensor& image, StandardizeReport* report = nullptr);

struct AugmentParams {
  /// Flip along depth, height, width.
  std::array<bool, 3> flip{false, false, false};
  /// Additive shift per modality, applied to nonzero voxels.
  std::vector<float> intensity_shift;
  /// In-plane rotation about the depth axis.
  double angle_degrees = 0.0;
  double scale = 1.0;

  bool resamples() const { return angle_degrees != 0.0 || scale != 1.0; }
};

struct AugmentRanges {
  double flip_probability = 0.5;
  double max_intensity_shift = 0.1;
  double max_angle_degrees = 15.0;
  double min_scale = 0.9;
  double max_scale = 1.1;
};

AugmentParams draw_augment_params(Rng& rng, std::int64_t modalities,
                                  const AugmentRanges& ranges = {});

/// Resamples the image bilinearly within each slice and the masks by
/// nearest neighbour, so every mask channel reads the same source voxel.
LabeledVolume apply_augment(const LabeledVolume& volume, const AugmentParams& params);

LabeledVolume augment(const LabeledVolume& volume, Rng& rng, const AugmentRanges& ranges = {});

// ---- optimizer and schedule ------------------------------------------------

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
};

/// One Adam update of `param` from param.grad with L2 decay folded into the
/// gradient. `step` counts from 1.
void adam_step(Parameter& param, AdamState& state, double lr, double weight_decay,
               std::int64_t step, const AdamSettings& settings = {});

class AdamOptimizer {
 public:
  explicit AdamOptimizer(ParameterRegistry& registry, AdamSettings settings = {});

  void step(double lr, double weight_decay);
  std::int64_t steps() const { return steps_; }

 private:
  ParameterRegistry* registry_;
  AdamSettings settings_;
  std::vector<AdamState> states_;
  std::int64_t steps_ = 0;
};

struct StepReport {
  double loss = 0.0;
  /// Tape retained_bytes right after the forward pass.
  std::int64_t stored_activation_bytes = 0;
};

/// One optimization step on a batch that is already standardized and
/// augmented: forward, dice loss, backward, Adam update.
StepReport training_step(Network& network, AdamOptimizer& optimizer, LabeledVolume batch,
                         ExecutionMode mode, double lr, double weight_decay, double epsilon_dice);

/// initial_lr divided by drop_factor once for every drop epoch <= epoch.
double lr_at(std::int64_t epoch, const TrainingConfig& config);

/// Moving averages over `window` entries, one per complete window.
std::vector<double> moving_average(const std::vector<double>& history, std::int64_t window);

/// True iff the moving average has set no new maximum within the last
/// `patience` epochs. Fewer than `window` entries never stop.
bool early_stop(const std::vector<double>& history, std::int64_t window, std::int64_t patience);

// ---- synthetic data and datasets -------------------------------------------

struct SyntheticSettings {
  std::int64_t modalities = 4;
  double noise_stddev = 0.15;
};

/// Cubic volume of extent `size`: a spherical brain with three nested
/// ellipsoidal regions, each shifting every modality's intensity, plus noise.
LabeledVolume generate_synthetic(Rng& rng, std::int64_t size, const SyntheticSettings& settings = {});

std::vector<LabeledVolume> generate_synthetic_set(std::uint64_t seed, std::int64_t count,
                                                  std::int64_t size,
                                                  const SyntheticSettings& settings = {});

struct Dataset {
  std::vector<std::string> ids;
  std::vector<LabeledVolume> volumes;
};

/// Writes <id>.image.rvt and <id>.regions.rvt per subject and manifest.txt.
void save_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

/// Deterministic shuffled split; returns (training indices, validation indices).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t count, double validation_fraction, std::uint64_t seed);

// ---- loops -----------------------------------------------------------------

struct RegionDice {
  std::array<double, 3> per_region{0.0, 0.0, 0.0};
  double mean() const { return (per_region[0] + per_region[1] + per_region[2]) / 3.0; }
};

/// Standardizes each volume, predicts the whole volume, binarizes at 0.5
/// and averages Dice over volumes.
RegionDice evaluate(const Network& network, const std::vector<LabeledVolume>& volumes);

struct EpochMetrics {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  RegionDice validation;
  double moving_average = 0.0;
  /// Largest tape retained_bytes after a forward pass in this epoch.
  std::int64_t stored_activation_bytes = 0;
  /// Tensor high-water mark during the epoch's training steps.
  std::int64_t peak_bytes = 0;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const EpochMetrics& metrics);

struct TrainingResult {
  std::vector<EpochMetrics> epochs;
  std::int64_t best_epoch = -1;
  RegionDice best_validation;
  std::vector<Tensor> best_parameters;
  bool stopped_early = false;
  bool reached_target = false;
};

struct TrainingHooks {
  /// Called after every epoch, e.g. for progress logs.
  std::function<void(const EpochMetrics&)> on_epoch;
  /// When set, receives the CSV log as it is produced.
  std::ostream* metrics = nullptr;
  /// When nonempty, the best network is saved to <dir>/best, the last one to
  /// <dir>/final and the log to <dir>/metrics.csv.
  std::string checkpoint_dir;
};

/// Splits the dataset, then per epoch: shuffles the training subjects; per
/// step augments, forwards, applies dice_loss, backpropagates and takes an
/// Adam step; then validates. The best mean validation Dice is tracked.
TrainingResult train(Network& network, const TrainingConfig& config,
                     const std::vector<LabeledVolume>& dataset, const TrainingHooks& hooks = {});

/// Copies a snapshot taken from network.registry() back into it.
void restore_parameters(Network& network, const std::vector<Tensor>& values);
std::vector<Tensor> snapshot_parameters(const Network& network);

}  // namespace revvolnet
