// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "revvolnet/allocation.hpp"

namespace revvolnet {

namespace fs = std::filesystem;

// ---- configuration ---------------------------------------------------------

namespace {

const std::vector<std::string> kConfigKeys{
    "initial_lr", "lr_drop_epochs", "lr_drop_factor", "weight_decay", "batch_size",
    "moving_average_window", "patience", "seed", "epsilon_dice", "max_epochs", "target_dice",
    "validation_fraction", "augment", "mode"};

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw std::invalid_argument("training field '" + field + "': " + why);
}

}  // namespace

void TrainingConfig::validate() const {
  if (!(initial_lr > 0.0)) bad_field("initial_lr", "must be positive");
  if (!(lr_drop_factor > 0.0)) bad_field("lr_drop_factor", "must be positive");
  if (!(weight_decay >= 0.0)) bad_field("weight_decay", "must not be negative");
  if (batch_size <= 0) bad_field("batch_size", "must be positive");
  if (moving_average_window <= 0) bad_field("moving_average_window", "must be positive");
  if (patience <= 0) bad_field("patience", "must be positive");
  if (moving_average_window > patience) {
    bad_field("moving_average_window", "must not exceed patience (" + std::to_string(patience) +
                                           ")");
  }
  if (!(epsilon_dice > 0.0)) bad_field("epsilon_dice", "must be positive");
  if (max_epochs <= 0) bad_field("max_epochs", "must be positive");
  if (!(target_dice >= 0.0 && target_dice <= 1.0)) bad_field("target_dice", "must lie in [0, 1]");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    bad_field("validation_fraction", "must lie strictly between 0 and 1");
  }
  for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
    if (lr_drop_epochs[i] <= 0) bad_field("lr_drop_epochs", "entries must be positive");
    if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) {
      bad_field("lr_drop_epochs", "entries must increase");
    }
  }
}

TrainingConfig TrainingConfig::from_key_values(const KeyValues& kv) {
  kv.reject_unknown(kConfigKeys);
  TrainingConfig c;
  if (kv.has("initial_lr")) c.initial_lr = kv.get_double("initial_lr");
  if (kv.has("lr_drop_epochs")) {
    c.lr_drop_epochs = kv.get("lr_drop_epochs").empty() ? std::vector<std::int64_t>{}
                                                         : kv.get_int_list("lr_drop_epochs");
  }
  if (kv.has("lr_drop_factor")) c.lr_drop_factor = kv.get_double("lr_drop_factor");
  if (kv.has("weight_decay")) c.weight_decay = kv.get_double("weight_decay");
  if (kv.has("batch_size")) c.batch_size = kv.get_int("batch_size");
  if (kv.has("moving_average_window")) {
    c.moving_average_window = kv.get_int("moving_average_window");
  }
  if (kv.has("patience")) c.patience = kv.get_int("patience");
  if (kv.has("seed")) {
    const std::int64_t seed = kv.get_int("seed");
    if (seed < 0) bad_field("seed", "must not be negative");
    c.seed = static_cast<std::uint64_t>(seed);
  }
  if (kv.has("epsilon_dice")) c.epsilon_dice = kv.get_double("epsilon_dice");
  if (kv.has("max_epochs")) c.max_epochs = kv.get_int("max_epochs");
  if (kv.has("target_dice")) c.target_dice = kv.get_double("target_dice");
  if (kv.has("validation_fraction")) c.validation_fraction = kv.get_double("validation_fraction");
  if (kv.has("augment")) c.augment = kv.get_bool("augment");
  if (kv.has("mode")) {
    const std::string& mode = kv.get("mode");
    if (mode == "reversible") {
      c.mode = ExecutionMode::kReversible;
    } else if (mode == "stored") {
      c.mode = ExecutionMode::kStoredActivations;
    } else {
      bad_field("mode", "expected 'reversible' or 'stored', got '" + mode + "'");
    }
  }
  c.validate();
  return c;
}

TrainingConfig TrainingConfig::parse(const std::string& text) {
  return from_key_values(KeyValues::parse(text));
}

TrainingConfig TrainingConfig::load(const std::string& path) {
  return from_key_values(KeyValues::load(path));
}

std::string TrainingConfig::to_text() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "initial_lr = " << initial_lr << '\n'
      << "lr_drop_epochs = " << join_ints(lr_drop_epochs) << '\n'
      << "lr_drop_factor = " << lr_drop_factor << '\n'
      << "weight_decay = " << weight_decay << '\n'
      << "batch_size = " << batch_size << '\n'
      << "moving_average_window = " << moving_average_window << '\n'
      << "patience = " << patience << '\n'
      << "seed = " << seed << '\n'
      << "epsilon_dice = " << epsilon_dice << '\n'
      << "max_epochs = " << max_epochs << '\n'
      << "target_dice = " << target_dice << '\n'
      << "validation_fraction = " << validation_fraction << '\n'
      << "augment = " << (augment ? "true" : "false") << '\n'
      << "mode = " << to_string(mode) << '\n';
  return out.str();
}

// ---- volumes -----------------------------------------------------------------

bool regions_nested(const Tensor& regions) {
  const Shape& s = regions.shape();
  if (s.channels() != kRegionCount) return false;
  const std::int64_t n = s.spatial();
  for (std::int64_t b = 0; b < s.batch(); ++b) {
    const float* wt = regions.raw() + (b * kRegionCount + 0) * n;
    const float* tc = regions.raw() + (b * kRegionCount + 1) * n;
    const float* et = regions.raw() + (b * kRegionCount + 2) * n;
    for (std::int64_t i = 0; i < n; ++i) {
      if (tc[i] > wt[i] || et[i] > tc[i]) return false;
    }
  }
  return true;
}

void LabeledVolume::validate() const {
  const Shape& is = image.shape();
  const Shape& rs = regions.shape();
  if (is.element_count() == 0) throw std::invalid_argument("volume: empty image");
  if (rs.channels() != kRegionCount) {
    throw std::invalid_argument("volume: expected 3 region masks, got " + rs.to_string());
  }
  if (rs.batch() != is.batch() || rs.depth() != is.depth() || rs.height() != is.height() ||
      rs.width() != is.width()) {
    throw std::invalid_argument("volume: masks " + rs.to_string() + " do not match image " +
                                is.to_string());
  }
  for (float v : regions.data()) {
    if (v != 0.0f && v != 1.0f) throw std::invalid_argument("volume: masks must be binary");
  }
  if (!regions_nested(regions)) throw std::invalid_argument("volume: masks violate WT ⊇ TC ⊇ ET");
}

// ---- loss and metrics ------------------------------------------------------

namespace {

void check_region_pair(const Shape& pred, const Shape& target, const char* what) {
  if (pred != target) {
    throw std::invalid_argument(std::string(what) + ": prediction " + pred.to_string() +
                                " vs target " + target.to_string());
  }
}

struct RegionSums {
  double overlap = 0.0;
  double pred = 0.0;
  double target = 0.0;
};

std::vector<RegionSums> region_sums(const Tensor& pred, const Tensor& target) {
  const Shape& s = pred.shape();
  const std::int64_t n = s.spatial();
  std::vector<RegionSums> sums(static_cast<std::size_t>(s.channels()));
  for (std::int64_t b = 0; b < s.batch(); ++b) {
    for (std::int64_t c = 0; c < s.channels(); ++c) {
      const float* p = pred.raw() + (b * s.channels() + c) * n;
      const float* g = target.raw() + (b * s.channels() + c) * n;
      RegionSums& r = sums[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < n; ++i) {
        r.overlap += static_cast<double>(p[i]) * g[i];
        r.pred += p[i];
        r.target += g[i];
      }
    }
  }
  return sums;
}

}  // namespace

double dice_loss(const Tensor& pred, const Tensor& target, double epsilon) {
  check_region_pair(pred.shape(), target.shape(), "dice_loss");
  double loss = 0.0;
  for (const RegionSums& r : region_sums(pred, target)) {
    loss += 1.0 - (2.0 * r.overlap + epsilon) / (r.pred + r.target + epsilon);
  }
  return loss;
}

Var dice_loss(Var pred, const Tensor& target, double epsilon) {
  check_region_pair(pred.shape(), target.shape(), "dice_loss");
  const auto sums = region_sums(pred.value(), target);
  double loss = 0.0;
  for (const RegionSums& r : sums) {
    loss += 1.0 - (2.0 * r.overlap + epsilon) / (r.pred + r.target + epsilon);
  }
  auto held = std::make_shared<Tensor>(target);
  return pred.tape->record(
      "dice_loss", {pred}, {}, Tensor::full(Shape(1, 1, 1, 1, 1), static_cast<float>(loss)),
      [held, sums, epsilon](BackwardContext& ctx) {
        const Tensor& g = *held;
        const Shape& s = g.shape();
        const std::int64_t n = s.spatial();
        const double seed = ctx.grad_output()[0];
        Tensor grad(s);
        for (std::int64_t b = 0; b < s.batch(); ++b) {
          for (std::int64_t c = 0; c < s.channels(); ++c) {
            const RegionSums& r = sums[static_cast<std::size_t>(c)];
            const double denom = r.pred + r.target + epsilon;
            const double numer = 2.0 * r.overlap + epsilon;
            // d/dp of -(numer / denom).
            const double a = -2.0 / denom;
            const double k = numer / (denom * denom);
            const float* gt = g.raw() + (b * s.channels() + c) * n;
            float* out = grad.raw() + (b * s.channels() + c) * n;
            for (std::int64_t i = 0; i < n; ++i) {
              out[i] = static_cast<float>(seed * (a * gt[i] + k));
            }
          }
        }
        ctx.add_input_grad(0, std::move(grad));
      },
      Saves{false, false});
}

std::vector<double> dice_score(const Tensor& pred_binary, const Tensor& target_binary) {
  check_region_pair(pred_binary.shape(), target_binary.shape(), "dice_score");
  std::vector<double> out;
  for (const RegionSums& r : region_sums(pred_binary, target_binary)) {
    const double total = r.pred + r.target;
    out.push_back(total == 0.0 ? 1.0 : 2.0 * r.overlap / total);
  }
  return out;
}

Tensor binarize(const Tensor& probabilities) {
  Tensor out(probabilities.shape());
  for (std::int64_t i = 0; i < out.element_count(); ++i) {
    out[i] = probabilities[i] > 0.5f ? 1.0f : 0.0f;
  }
  return out;
}

// ---- preprocessing ---------------------------------------------------------

Tensor standardize(const Tensor& image, StandardizeReport* report) {
  Tensor out = image;
  const Shape& s = image.shape();
  const std::int64_t n = s.spatial();
  for (std::int64_t b = 0; b < s.batch(); ++b) {
    for (std::int64_t c = 0; c < s.channels(); ++c) {
      float* v = out.raw() + (b * s.channels() + c) * n;
      double sum = 0.0;
      std::int64_t count = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        if (v[i] != 0.0f) {
          sum += v[i];
          ++count;
        }
      }
      if (count == 0) {
        if (report) report->empty_modalities.emplace_back(b, c);
        continue;
      }
      const double mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        if (v[i] != 0.0f) sq += (v[i] - mean) * (v[i] - mean);
      }
      const double stddev = std::sqrt(sq / static_cast<double>(count));
      const double inv = stddev > 0.0 ? 1.0 / stddev : 1.0;
      for (std::int64_t i = 0; i < n; ++i) {
        if (v[i] != 0.0f) v[i] = static_cast<float>((v[i] - mean) * inv);
      }
    }
  }
  return out;
}

// ---- augmentation ----------------------------------------------------------

AugmentParams draw_augment_params(Rng& rng, std::int64_t modalities, const AugmentRanges& r) {
  AugmentParams p;
  std::bernoulli_distribution flip(r.flip_probability);
  for (bool& f : p.flip) f = flip(rng);
  std::uniform_real_distribution<double> shift(-r.max_intensity_shift, r.max_intensity_shift);
  for (std::int64_t m = 0; m < modalities; ++m) {
    p.intensity_shift.push_back(static_cast<float>(shift(rng)));
  }
  p.angle_degrees = std::uniform_real_distribution<double>(-r.max_angle_degrees,
                                                           r.max_angle_degrees)(rng);
  p.scale = std::uniform_real_distribution<double>(r.min_scale, r.max_scale)(rng);
  return p;
}

namespace {

Tensor flip_axes(const Tensor& t, const std::array<bool, 3>& flip) {
  if (!flip[0] && !flip[1] && !flip[2]) return t;
  const Shape& s = t.shape();
  Tensor out(s);
  for (std::int64_t b = 0; b < s.batch(); ++b) {
    for (std::int64_t c = 0; c < s.channels(); ++c) {
      for (std::int64_t z = 0; z < s.depth(); ++z) {
        const std::int64_t sz = flip[0] ? s.depth() - 1 - z : z;
        for (std::int64_t y = 0; y < s.height(); ++y) {
          const std::int64_t sy = flip[1] ? s.height() - 1 - y : y;
          for (std::int64_t x = 0; x < s.width(); ++x) {
            const std::int64_t sx = flip[2] ? s.width() - 1 - x : x;
            out.at(b, c, z, y, x) = t.at(b, c, sz, sy, sx);
          }
        }
      }
    }
  }
  return out;
}

// Maps every output (y, x) to its source position under rotation by the
// given angle and scaling about the slice centre.
struct InPlaneMap {
  double cy, cx, cos_a, sin_a, inv_scale;

  InPlaneMap(const Shape& s, const AugmentParams& p)
      : cy((static_cast<double>(s.height()) - 1.0) / 2.0),
        cx((static_cast<double>(s.width()) - 1.0) / 2.0),
        cos_a(std::cos(p.angle_degrees * std::numbers::pi / 180.0)),
        sin_a(std::sin(p.angle_degrees * std::numbers::pi / 180.0)),
        inv_scale(1.0 / p.scale) {}

  std::pair<double, double> source(std::int64_t y, std::int64_t x) const {
    const double v = static_cast<double>(y) - cy;
    const double u = static_cast<double>(x) - cx;
    const double su = (cos_a * u + sin_a * v) * inv_scale;
    const double sv = (-sin_a * u + cos_a * v) * inv_scale;
    return {sv + cy, su + cx};
  }
};

Tensor resample_linear(const Tensor& t, const InPlaneMap& map) {
  const Shape& s = t.shape();
  Tensor out(s);
  const std::int64_t h = s.height();
  const std::int64_t w = s.width();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto [sy, sx] = map.source(y, x);
      const double fy = std::floor(sy);
      const double fx = std::floor(sx);
      const auto y0 = static_cast<std::int64_t>(fy);
      const auto x0 = static_cast<std::int64_t>(fx);
      const double ty = sy - fy;
      const double tx = sx - fx;
      const std::array<std::int64_t, 2> ys{y0, y0 + 1};
      const std::array<std::int64_t, 2> xs{x0, x0 + 1};
      const std::array<double, 2> wy{1.0 - ty, ty};
      const std::array<double, 2> wx{1.0 - tx, tx};
      for (std::int64_t b = 0; b < s.batch(); ++b) {
        for (std::int64_t c = 0; c < s.channels(); ++c) {
          for (std::int64_t z = 0; z < s.depth(); ++z) {
            double acc = 0.0;
            for (int i = 0; i < 2; ++i) {
              if (ys[i] < 0 || ys[i] >= h || wy[i] == 0.0) continue;
              for (int j = 0; j < 2; ++j) {
                if (xs[j] < 0 || xs[j] >= w || wx[j] == 0.0) continue;
                acc += wy[i] * wx[j] * t.at(b, c, z, ys[i], xs[j]);
              }
            }
            out.at(b, c, z, y, x) = static_cast<float>(acc);
          }
        }
      }
    }
  }
  return out;
}

Tensor resample_nearest(const Tensor& t, const InPlaneMap& map) {
  const Shape& s = t.shape();
  Tensor out(s);
  for (std::int64_t y = 0; y < s.height(); ++y) {
    for (std::int64_t x = 0; x < s.width(); ++x) {
      const auto [sy, sx] = map.source(y, x);
      const auto ny = static_cast<std::int64_t>(std::lround(sy));
      const auto nx = static_cast<std::int64_t>(std::lround(sx));
      if (ny < 0 || ny >= s.height() || nx < 0 || nx >= s.width()) continue;
      for (std::int64_t b = 0; b < s.batch(); ++b) {
        for (std::int64_t c = 0; c < s.channels(); ++c) {
          for (std::int64_t z = 0; z < s.depth(); ++z) {
            out.at(b, c, z, y, x) = t.at(b, c, z, ny, nx);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

LabeledVolume apply_augment(const LabeledVolume& volume, const AugmentParams& params) {
  const Shape& s = volume.image.shape();
  if (!params.intensity_shift.empty() &&
      static_cast<std::int64_t>(params.intensity_shift.size()) != s.channels()) {
    throw std::invalid_argument("augment: " + std::to_string(params.intensity_shift.size()) +
                                " intensity shifts for " + std::to_string(s.channels()) +
                                " modalities");
  }
  LabeledVolume out{flip_axes(volume.image, params.flip), flip_axes(volume.regions, params.flip)};
  if (params.resamples()) {
    const InPlaneMap map(s, params);
    out.image = resample_linear(out.image, map);
    out.regions = resample_nearest(out.regions, map);
  }
  if (!params.intensity_shift.empty()) {
    const std::int64_t n = s.spatial();
    for (std::int64_t b = 0; b < s.batch(); ++b) {
      for (std::int64_t c = 0; c < s.channels(); ++c) {
        const float shift = params.intensity_shift[static_cast<std::size_t>(c)];
        if (shift == 0.0f) continue;
        float* v = out.image.raw() + (b * s.channels() + c) * n;
        for (std::int64_t i = 0; i < n; ++i) {
          if (v[i] != 0.0f) v[i] += shift;
        }
      }
    }
  }
  return out;
}

LabeledVolume augment(const LabeledVolume& volume, Rng& rng, const AugmentRanges& ranges) {
  return apply_augment(volume, draw_augment_params(rng, volume.image.shape().channels(), ranges));
}

// ---- optimizer and schedule ------------------------------------------------

void adam_step(Parameter& param, AdamState& state, double lr, double weight_decay,
               std::int64_t step, const AdamSettings& s) {
  if (step <= 0) throw std::invalid_argument("adam_step: step counts from 1");
  if (state.first_moment.shape() != param.value.shape()) {
    state.first_moment = Tensor::zeros(param.value.shape());
    state.second_moment = Tensor::zeros(param.value.shape());
  }
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
  float* p = param.value.raw();
  const float* g = param.grad.raw();
  float* m = state.first_moment.raw();
  float* v = state.second_moment.raw();
  for (std::int64_t i = 0; i < param.value.element_count(); ++i) {
    const double grad = static_cast<double>(g[i]) + weight_decay * p[i];
    const double mi = s.beta1 * m[i] + (1.0 - s.beta1) * grad;
    const double vi = s.beta2 * v[i] + (1.0 - s.beta2) * grad * grad;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    p[i] = static_cast<float>(p[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + s.epsilon));
  }
}

AdamOptimizer::AdamOptimizer(ParameterRegistry& registry, AdamSettings settings)
    : registry_(&registry), settings_(settings) {
  states_.reserve(registry.size());
  for (const Parameter& p : registry) {
    states_.push_back({Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())});
  }
}

void AdamOptimizer::step(double lr, double weight_decay) {
  ++steps_;
  for (std::size_t i = 0; i < states_.size(); ++i) {
    adam_step((*registry_)[i], states_[i], lr, weight_decay, steps_, settings_);
  }
}

StepReport training_step(Network& network, AdamOptimizer& optimizer, LabeledVolume batch,
                         ExecutionMode mode, double lr, double weight_decay, double epsilon_dice) {
  network.registry().zero_grad();
  StepReport report;
  Tape tape;
  Var x = tape.leaf(std::move(batch.image));
  Var pred = network.forward(x, mode);
  report.stored_activation_bytes = tape.retained_bytes();
  Var loss = dice_loss(pred, batch.regions, epsilon_dice);
  report.loss = loss.value()[0];
  tape.backward(loss);
  optimizer.step(lr, weight_decay);
  return report;
}

double lr_at(std::int64_t epoch, const TrainingConfig& config) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  double lr = config.initial_lr;
  for (std::int64_t drop : config.lr_drop_epochs) {
    if (epoch >= drop) lr /= config.lr_drop_factor;
  }
  return lr;
}

std::vector<double> moving_average(const std::vector<double>& history, std::int64_t window) {
  if (window <= 0) throw std::invalid_argument("moving_average: window must be positive");
  std::vector<double> out;
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t end = w; end <= history.size(); ++end) {
    double sum = 0.0;
    for (std::size_t i = end - w; i < end; ++i) sum += history[i];
    out.push_back(sum / static_cast<double>(w));
  }
  return out;
}

bool early_stop(const std::vector<double>& history, std::int64_t window, std::int64_t patience) {
  if (patience <= 0) throw std::invalid_argument("early_stop: patience must be positive");
  const std::vector<double> averages = moving_average(history, window);
  if (averages.empty()) return false;
  std::size_t best_at = 0;
  for (std::size_t i = 1; i < averages.size(); ++i) {
    if (averages[i] > averages[best_at]) best_at = i;
  }
  return static_cast<std::int64_t>(averages.size() - 1 - best_at) >= patience;
}

// ---- synthetic data --------------------------------------------------------

namespace {

struct Ellipsoid {
  std::array<double, 3> centre;
  std::array<double, 3> radii;

  bool contains(double z, double y, double x) const {
    const double a = (z - centre[0]) / radii[0];
    const double b = (y - centre[1]) / radii[1];
    const double c = (x - centre[2]) / radii[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

// Intensity offsets added per region and modality; columns cycle for more
// than four modalities.
constexpr std::array<std::array<double, 4>, 3> kRegionOffsets{{
    {0.9, 0.5, 1.1, 0.6},
    {0.5, 0.9, -0.6, 0.7},
    {0.7, -0.5, 0.8, 1.0},
}};

}  // namespace

LabeledVolume generate_synthetic(Rng& rng, std::int64_t size, const SyntheticSettings& settings) {
  if (size <= 0) throw std::invalid_argument("generate_synthetic: size must be positive");
  if (settings.modalities <= 0) {
    throw std::invalid_argument("generate_synthetic: modalities must be positive");
  }
  const double extent = static_cast<double>(size);
  const double mid = (extent - 1.0) / 2.0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Ellipsoid wt{}, tc{}, et{};
  for (int a = 0; a < 3; ++a) {
    wt.radii[a] = between(0.18, 0.28) * extent;
    tc.radii[a] = wt.radii[a] * between(0.5, 0.65);
    et.radii[a] = tc.radii[a] * between(0.4, 0.5);
    et.radii[a] = std::max(et.radii[a], 1.0);
    tc.radii[a] = std::max(tc.radii[a], 2.0 * et.radii[a]);
    wt.radii[a] = std::max(wt.radii[a], 1.6 * tc.radii[a]);
  }
  for (int a = 0; a < 3; ++a) {
    wt.centre[a] = mid + between(-0.08, 0.08) * extent;
    tc.centre[a] = wt.centre[a] + between(-0.25, 0.25) * (wt.radii[a] - tc.radii[a]);
    et.centre[a] = tc.centre[a] + between(-0.25, 0.25) * (tc.radii[a] - et.radii[a]);
  }
  const double brain_radius = 0.45 * extent + 0.5;

  const std::int64_t m = settings.modalities;
  LabeledVolume out{Tensor(Shape(1, m, size, size, size)),
                    Tensor(Shape(1, kRegionCount, size, size, size))};
  std::normal_distribution<double> noise(0.0, settings.noise_stddev);
  for (std::int64_t z = 0; z < size; ++z) {
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        const double fz = static_cast<double>(z), fy = static_cast<double>(y),
                     fx = static_cast<double>(x);
        const double r2 = (fz - mid) * (fz - mid) + (fy - mid) * (fy - mid) + (fx - mid) * (fx - mid);
        const bool brain = r2 <= brain_radius * brain_radius;
        const bool in_wt = wt.contains(fz, fy, fx);
        const bool in_tc = in_wt && tc.contains(fz, fy, fx);
        const bool in_et = in_tc && et.contains(fz, fy, fx);
        const std::array<bool, 3> region{in_wt, in_tc, in_et};
        for (std::int64_t r = 0; r < kRegionCount; ++r) {
          out.regions.at(0, r, z, y, x) = region[static_cast<std::size_t>(r)] ? 1.0f : 0.0f;
        }
        for (std::int64_t c = 0; c < m; ++c) {
          const double n = noise(rng);
          if (!brain && !in_wt) continue;
          double v = 1.0 + 0.25 * static_cast<double>(c % 4) + n;
          for (std::size_t r = 0; r < 3; ++r) {
            if (region[r]) v += kRegionOffsets[r][static_cast<std::size_t>(c % 4)];
          }
          out.image.at(0, c, z, y, x) = static_cast<float>(v);
        }
      }
    }
  }
  return out;
}

std::vector<LabeledVolume> generate_synthetic_set(std::uint64_t seed, std::int64_t count,
                                                  std::int64_t size,
                                                  const SyntheticSettings& settings) {
  if (count < 0) throw std::invalid_argument("generate_synthetic_set: negative count");
  Rng rng(seed);
  std::vector<LabeledVolume> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) out.push_back(generate_synthetic(rng, size, settings));
  return out;
}

// ---- dataset directories ---------------------------------------------------

namespace {

constexpr const char* kDatasetHeader = "revvolnet-dataset 1";

}  // namespace

void save_dataset(const std::string& dir, const Dataset& dataset) {
  if (dataset.ids.size() != dataset.volumes.size()) {
    throw std::invalid_argument("save_dataset: ids and volumes differ in count");
  }
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write " + dir + "/manifest.txt");
  manifest << kDatasetHeader << '\n';
  for (std::size_t i = 0; i < dataset.ids.size(); ++i) {
    const std::string& id = dataset.ids[i];
    if (id.empty() || id.find_first_of(" \t\n/") != std::string::npos) {
      throw std::invalid_argument("save_dataset: invalid subject id '" + id + "'");
    }
    dataset.volumes[i].validate();
    const std::string image = id + ".image.rvt";
    const std::string regions = id + ".regions.rvt";
    save_tensor((fs::path(dir) / image).string(), dataset.volumes[i].image);
    save_tensor((fs::path(dir) / regions).string(), dataset.volumes[i].regions);
    manifest << id << ' ' << image << ' ' << regions << '\n';
  }
  if (!manifest) throw std::runtime_error("failed writing " + dir + "/manifest.txt");
}

Dataset load_dataset(const std::string& dir) {
  const fs::path path = fs::path(dir) / "manifest.txt";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kDatasetHeader) {
    throw std::runtime_error(path.string() + ": missing header '" + kDatasetHeader + "'");
  }
  Dataset out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id, image, regions, extra;
    if (!(fields >> id >> image >> regions) || (fields >> extra)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected 'id image regions'");
    }
    LabeledVolume v{load_tensor((fs::path(dir) / image).string()),
                    load_tensor((fs::path(dir) / regions).string())};
    v.validate();
    out.ids.push_back(id);
    out.volumes.push_back(std::move(v));
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t count, double validation_fraction, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("split: empty dataset");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (count == 1) return {order, order};
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto held = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(count)));
  held = std::clamp<std::size_t>(held, 1, count - 1);
  std::vector<std::size_t> validation(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> training(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(validation.begin(), validation.end());
  std::sort(training.begin(), training.end());
  return {training, validation};
}

// ---- loops -----------------------------------------------------------------

RegionDice evaluate(const Network& network, const std::vector<LabeledVolume>& volumes) {
  if (volumes.empty()) throw std::invalid_argument("evaluate: empty dataset");
  RegionDice out;
  for (const LabeledVolume& v : volumes) {
    const Tensor pred = binarize(network.predict(standardize(v.image)));
    const std::vector<double> d = dice_score(pred, v.regions);
    for (std::size_t r = 0; r < 3; ++r) out.per_region[r] += d.at(r);
  }
  for (double& d : out.per_region) d /= static_cast<double>(volumes.size());
  return out;
}

void write_metrics_header(std::ostream& out) {
  out << "epoch,lr,train_loss,val_dice_wt,val_dice_tc,val_dice_et,moving_avg,"
         "stored_activation_bytes,peak_bytes\n";
}

void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  const auto precision = out.precision(10);
  out << m.epoch << ',' << m.lr << ',' << m.train_loss << ',' << m.validation.per_region[0] << ','
      << m.validation.per_region[1] << ',' << m.validation.per_region[2] << ','
      << m.moving_average << ',' << m.stored_activation_bytes << ',' << m.peak_bytes << '\n';
  out.precision(precision);
  out.flush();
}

std::vector<Tensor> snapshot_parameters(const Network& network) {
  std::vector<Tensor> out;
  for (const Parameter& p : network.registry()) out.push_back(p.value);
  return out;
}

void restore_parameters(Network& network, const std::vector<Tensor>& values) {
  ParameterRegistry& registry = network.registry();
  if (values.size() != registry.size()) {
    throw std::invalid_argument("restore_parameters: snapshot holds " +
                                std::to_string(values.size()) + " tensors, network has " +
                                std::to_string(registry.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != registry[i].value.shape()) {
      throw std::invalid_argument("restore_parameters: shape mismatch for " + registry[i].name);
    }
    registry[i].value = values[i];
  }
}

namespace {

LabeledVolume stack(const std::vector<const LabeledVolume*>& parts) {
  if (parts.size() == 1) return *parts.front();
  const Shape is = parts.front()->image.shape();
  const Shape rs = parts.front()->regions.shape();
  const auto n = static_cast<std::int64_t>(parts.size());
  LabeledVolume out{Tensor(Shape(n, is.channels(), is.depth(), is.height(), is.width())),
                    Tensor(Shape(n, rs.channels(), rs.depth(), rs.height(), rs.width()))};
  for (std::int64_t i = 0; i < n; ++i) {
    const LabeledVolume& p = *parts[static_cast<std::size_t>(i)];
    if (p.image.shape() != is || p.regions.shape() != rs) {
      throw std::invalid_argument("batch: volumes differ in shape");
    }
    std::copy(p.image.raw(), p.image.raw() + p.image.element_count(),
              out.image.raw() + i * p.image.element_count());
    std::copy(p.regions.raw(), p.regions.raw() + p.regions.element_count(),
              out.regions.raw() + i * p.regions.element_count());
  }
  return out;
}

}  // namespace

TrainingResult train(Network& network, const TrainingConfig& config,
                     const std::vector<LabeledVolume>& dataset, const TrainingHooks& hooks) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (const LabeledVolume& v : dataset) {
    v.validate();
    if (v.image.shape().batch() != 1) {
      throw std::invalid_argument("train: dataset volumes must hold one subject each");
    }
    network.check_input(v.image.shape());
  }

  const auto [train_ids, val_ids] = split_indices(dataset.size(), config.validation_fraction,
                                                  config.seed);
  std::vector<LabeledVolume> prepared;
  for (std::size_t i : train_ids) {
    prepared.push_back({standardize(dataset[i].image), dataset[i].regions});
  }
  std::vector<LabeledVolume> validation;
  for (std::size_t i : val_ids) validation.push_back(dataset[i]);

  std::unique_ptr<std::ofstream> csv_file;
  if (!hooks.checkpoint_dir.empty()) {
    fs::create_directories(hooks.checkpoint_dir);
    csv_file = std::make_unique<std::ofstream>(fs::path(hooks.checkpoint_dir) / "metrics.csv");
    if (!*csv_file) throw std::runtime_error("cannot write metrics.csv in " + hooks.checkpoint_dir);
    write_metrics_header(*csv_file);
  }
  if (hooks.metrics) write_metrics_header(*hooks.metrics);

  Rng order_rng(config.seed);
  Rng augment_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  AdamOptimizer optimizer(network.registry());
  std::vector<std::size_t> order(prepared.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainingResult result;
  std::vector<double> history;
  auto& counter = AllocationCounter::instance();
  for (std::int64_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr_at(epoch, config);
    std::shuffle(order.begin(), order.end(), order_rng);
    counter.reset_peak();
    double loss_sum = 0.0;
    std::int64_t steps = 0;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<LabeledVolume> augmented;
      std::vector<const LabeledVolume*> parts;
      for (std::size_t j = start; j < std::min(order.size(), start + batch); ++j) {
        const LabeledVolume& src = prepared[order[j]];
        if (config.augment) {
          augmented.push_back(augment(src, augment_rng));
        } else {
          augmented.push_back(src);
        }
      }
      for (const LabeledVolume& v : augmented) parts.push_back(&v);
      LabeledVolume step_input = stack(parts);
      augmented.clear();

      const StepReport step = training_step(network, optimizer, std::move(step_input), config.mode,
                                            m.lr, config.weight_decay, config.epsilon_dice);
      m.stored_activation_bytes = std::max(m.stored_activation_bytes, step.stored_activation_bytes);
      loss_sum += step.loss;
      ++steps;
    }
    m.peak_bytes = counter.peak_bytes();
    m.train_loss = loss_sum / static_cast<double>(steps);
    m.validation = evaluate(network, validation);
    history.push_back(m.validation.mean());
    const std::size_t window =
        std::min(history.size(), static_cast<std::size_t>(config.moving_average_window));
    double recent = 0.0;
    for (std::size_t i = history.size() - window; i < history.size(); ++i) recent += history[i];
    m.moving_average = recent / static_cast<double>(window);

    if (result.best_epoch < 0 || m.validation.mean() > result.best_validation.mean()) {
      result.best_epoch = epoch;
      result.best_validation = m.validation;
      result.best_parameters = snapshot_parameters(network);
      if (!hooks.checkpoint_dir.empty()) {
        network.save((fs::path(hooks.checkpoint_dir) / "best").string());
      }
    }
    result.epochs.push_back(m);
    if (csv_file) write_metrics_row(*csv_file, m);
    if (hooks.metrics) write_metrics_row(*hooks.metrics, m);
    if (hooks.on_epoch) hooks.on_epoch(m);

    if (config.target_dice > 0.0 && m.validation.per_region[0] >= config.target_dice) {
      result.reached_target = true;
      break;
    }
    if (early_stop(history, config.moving_average_window, config.patience)) {
      result.stopped_early = true;
      break;
    }
  }
  if (!hooks.checkpoint_dir.empty()) {
    network.save((fs::path(hooks.checkpoint_dir) / "final").string());
  }
  return result;
}

}  // namespace revvolnet
