// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "revvolnet/allocation.hpp"
#include "revvolnet/architecture.hpp"
#include "revvolnet/memory_model.hpp"
#include "revvolnet/profiling.hpp"
#include "revvolnet/random.hpp"
#include "revvolnet/tape.hpp"
#include "revvolnet/training.hpp"
#include "revvolnet/unet.hpp"
#include "revvolnet/verification.hpp"

namespace revvolnet::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kDataSeedSalt = 0xA5A5A5A5ULL;

void emit(std::ostream& out, const Json& doc) { out << doc.dump(2) << '\n'; }

ArchitectureSpec load_spec(const std::string& path) {
  if (path.empty()) throw UsageError("--spec is required");
  if (!fs::exists(path)) throw UsageError("spec file not found: " + path);
  if (fs::file_size(path) == 0) throw UsageError("spec file is empty: " + path);
  try {
    ArchitectureSpec spec = ArchitectureSpec::load(path);
    spec.validate();
    return spec;
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid spec ") + path + ": " + e.what());
  }
}

TrainingConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  try {
    TrainingConfig config = TrainingConfig::load(path);
    config.validate();
    return config;
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid config ") + path + ": " + e.what());
  }
}

Shape parse_input_shape(const std::string& text, std::int64_t batch, std::int64_t channels) {
  std::vector<std::int64_t> dims;
  try {
    dims = parse_int_list(text, "--input-shape");
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (dims.size() != 3 || std::any_of(dims.begin(), dims.end(), [](auto d) { return d <= 0; })) {
    throw UsageError("--input-shape expects three positive extents d,h,w");
  }
  if (batch <= 0) throw UsageError("--batch must be positive");
  return Shape(batch, channels, dims[0], dims[1], dims[2]);
}

Shape checked_input(const Network& network, const std::string& text, std::int64_t batch) {
  const Shape shape = parse_input_shape(text, batch, network.spec().in_channels);
  try {
    network.check_input(shape);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  return shape;
}

std::vector<std::int64_t> dims_of(const Shape& s) { return {s.dims.begin(), s.dims.end()}; }

Json to_json(const MemoryReport& report) {
  Json terms = Json::array();
  for (const LayerCost& t : report.terms) {
    terms.push_back({{"id", t.id},
                     {"name", t.name},
                     {"op", t.op},
                     {"kind", to_string(t.kind)},
                     {"output_bytes", t.output_bytes},
                     {"activation_bytes", t.activation_bytes},
                     {"retained_bytes", t.retained_bytes},
                     {"parameter_bytes", t.parameter_bytes},
                     {"derivative_bytes", t.derivative_bytes},
                     {"backward_bytes", t.backward_bytes}});
  }
  const MemoryBreakdown& b = report.breakdown;
  Json doc;
  doc["input_shape"] = dims_of(report.input_shape);
  doc["optimizer_multiplier"] = report.optimizer_multiplier;
  doc["total_nonrev_bytes"] = report.total_nonrev_bytes;
  doc["total_prev_bytes"] = report.total_prev_bytes;
  doc["breakdown"] = {{"activation_bytes", b.activation_bytes},
                      {"nonreversible_bytes", b.nonreversible_bytes},
                      {"boundary_bytes", b.boundary_bytes},
                      {"parameter_bytes", b.parameter_bytes},
                      {"max_derivative_bytes", b.max_derivative_bytes},
                      {"max_backward_bytes", b.max_backward_bytes},
                      {"naive_max_derivative_bytes", b.naive_max_derivative_bytes},
                      {"max_reversible_frontier_bytes", b.max_reversible_frontier_bytes}};
  doc["backward_strategy"] = report.backward_strategy;
  doc["measured_peak_bytes"] =
      report.measured_peak_bytes ? Json(*report.measured_peak_bytes) : Json(nullptr);
  doc["terms"] = std::move(terms);
  return doc;
}

// The total that applies to how the network actually trains.
std::int64_t training_total(const Network& network, const MemoryReport& report) {
  return network.spec().reversible ? report.total_prev_bytes : report.total_nonrev_bytes;
}

struct EstimateResult {
  Network network;
  MemoryReport report;
};

EstimateResult estimate_for(const std::string& path, const EstimateOptions& options,
                            std::ostream& log) {
  Network network(load_spec(path), options.seed);
  const Shape input = checked_input(network, options.input_shape, options.batch);
  MemoryReport report = estimate_memory(network, input, options.optimizer_multiplier);
  if (options.measure) {
    log << "measuring one training step for " << path << '\n';
    report.measured_peak_bytes =
        measure_training_step(network, input, native_mode(network.spec()), options.seed);
  }
  return {std::move(network), std::move(report)};
}

Json region_json(const RegionDice& dice) {
  Json doc;
  for (std::size_t r = 0; r < kRegionNames.size(); ++r) doc[kRegionNames[r]] = dice.per_region[r];
  doc["mean"] = dice.mean();
  return doc;
}

std::vector<LabeledVolume> load_volumes(const std::string& data,
                                        const std::optional<std::int64_t>& synthetic,
                                        std::int64_t size, std::uint64_t seed, std::ostream& log) {
  if (data.empty() == !synthetic.has_value()) {
    throw UsageError("exactly one of --data or --synthetic is required");
  }
  if (synthetic) {
    if (*synthetic <= 0) throw UsageError("--synthetic must be positive");
    if (size <= 0) throw UsageError("--size must be positive");
    log << "generating " << *synthetic << " synthetic volumes of extent " << size << '\n';
    return generate_synthetic_set(seed ^ kDataSeedSalt, *synthetic, size);
  }
  if (!fs::is_directory(data)) throw UsageError("data directory not found: " + data);
  return load_dataset(data).volumes;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

int run_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& log) {
  if (options.depth < 0) throw UsageError("--depth must be non-negative");
  std::optional<ArchitectureSpec> spec;
  if (!options.spec.empty()) spec = load_spec(options.spec);
  inject_backward_fault(options.inject_fault);

  log << "finite differences over the primitive ops\n";
  const std::vector<OpCheck> ops = finite_difference_suite(options.seed);
  log << "reversible sequence of depth " << options.depth << " against stored activations\n";
  const EquivalenceCheck sequence = sequence_equivalence(options.seed, options.depth);
  std::optional<EquivalenceCheck> network;
  if (spec) {
    log << "whole network from " << options.spec << " against stored activations\n";
    network = network_equivalence(*spec, options.seed);
  }
  inject_backward_fault("");

  Json doc;
  doc["seed"] = options.seed;
  doc["depth"] = options.depth;
  doc["spec"] = options.spec.empty() ? Json(nullptr) : Json(options.spec);
  doc["inject_fault"] = options.inject_fault.empty() ? Json(nullptr) : Json(options.inject_fault);
  Json op_list = Json::array();
  std::vector<std::string> failing;
  for (const OpCheck& c : ops) {
    op_list.push_back({{"op", c.op},
                       {"worst_relative_error", c.worst_relative_error},
                       {"worst_absolute_error", c.worst_absolute_error},
                       {"worst_at", c.worst_at},
                       {"elements", c.elements},
                       {"forward_relative_error", c.forward_relative_error},
                       {"passed", c.passed}});
    if (!c.passed) failing.push_back(c.op);
  }
  doc["ops"] = std::move(op_list);
  auto equivalence_json = [](const EquivalenceCheck& c) {
    return Json{{"depth", c.depth},
                {"worst_relative_error", c.worst_relative_error},
                {"worst_tensor", c.worst_tensor},
                {"passed", c.passed}};
  };
  doc["equivalence"] = equivalence_json(sequence);
  if (!sequence.passed) failing.push_back("reversible_sequence");
  doc["network_equivalence"] = network ? equivalence_json(*network) : Json(nullptr);
  if (network && !network->passed) failing.push_back("network");
  doc["failing"] = failing;
  doc["passed"] = failing.empty();
  emit(out, doc);
  for (const std::string& op : failing) log << "FAILED: " << op << '\n';
  return failing.empty() ? kExitOk : kExitVerificationFailed;
}

int run_invert(const InvertOptions& options, std::ostream& out, std::ostream& log) {
  if (options.trials <= 0) throw UsageError("--trials must be positive");
  if (options.channels <= 0 || options.channels % 2 != 0) {
    throw UsageError("--channels must be a positive even number");
  }
  if (options.extent <= 0) throw UsageError("--extent must be positive");
  log << "round-tripping " << options.trials << " random blocks\n";
  const InversionCheck check = inversion_trials(options.seed, options.trials, options.channels,
                                                options.extent, options.tolerance);
  Json doc;
  doc["seed"] = options.seed;
  doc["trials"] = check.trials;
  doc["channels"] = options.channels;
  doc["extent"] = options.extent;
  doc["tolerance"] = options.tolerance;
  doc["max_error"] = check.max_error;
  doc["passed"] = check.passed;
  emit(out, doc);
  return check.passed ? kExitOk : kExitVerificationFailed;
}

int run_estimate(const EstimateOptions& options, std::ostream& out, std::ostream& log) {
  if (options.format != "json" && options.format != "table") {
    throw UsageError("--format must be json or table");
  }
  if (options.input_shape.empty()) throw UsageError("--input-shape is required");
  if (options.optimizer_multiplier <= 0) throw UsageError("--optimizer-multiplier must be positive");
  // Validate both specs before doing any measured work.
  load_spec(options.spec);
  if (!options.compare.empty()) load_spec(options.compare);

  EstimateResult primary = estimate_for(options.spec, options, log);
  std::optional<EstimateResult> other;
  if (!options.compare.empty()) other = estimate_for(options.compare, options, log);

  if (options.format == "table") {
    out << "# " << options.spec << '\n' << format_table(primary.report);
    if (other) {
      const auto a = training_total(primary.network, primary.report);
      const auto b = training_total(other->network, other->report);
      out << "\n# " << options.compare << '\n' << format_table(other->report) << '\n'
          << "training bytes: " << a << " vs " << b << "  ratio "
          << static_cast<double>(a) / static_cast<double>(b) << '\n';
    }
    return kExitOk;
  }

  auto described = [](const std::string& path, const EstimateResult& r) {
    Json doc{{"spec", path},
             {"reversible", r.network.spec().reversible},
             {"parameter_count", r.network.parameter_count()},
             {"training_bytes", training_total(r.network, r.report)}};
    const Json report = to_json(r.report);
    for (const auto& [key, value] : report.items()) doc[key] = value;
    return doc;
  };
  Json doc = described(options.spec, primary);
  if (other) {
    const auto a = training_total(primary.network, primary.report);
    const auto b = training_total(other->network, other->report);
    doc["compare"] = described(options.compare, *other);
    doc["comparison"] = {{"training_bytes", a},
                         {"compare_training_bytes", b},
                         {"ratio", static_cast<double>(a) / static_cast<double>(b)},
                         {"reduction", 1.0 - static_cast<double>(a) / static_cast<double>(b)}};
  } else {
    doc["compare"] = nullptr;
    doc["comparison"] = nullptr;
  }
  emit(out, doc);
  return kExitOk;
}

int run_train(const TrainOptions& options, std::ostream& out, std::ostream& log) {
  if (options.out.empty()) throw UsageError("--out is required");
  const ArchitectureSpec spec = load_spec(options.spec);
  TrainingConfig config = load_config(options.config);
  if (options.seed) config.seed = *options.seed;
  if (options.max_epochs) {
    if (*options.max_epochs <= 0) throw UsageError("--max-epochs must be positive");
    config.max_epochs = *options.max_epochs;
  }
  const std::vector<LabeledVolume> volumes =
      load_volumes(options.data, options.synthetic, options.size, config.seed, log);
  Network network(spec, config.seed);
  try {
    network.check_input(volumes.front().image.shape());
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  fs::create_directories(options.out);
  config.validate();
  {
    std::ofstream saved(fs::path(options.out) / "config.txt");
    saved << config.to_text();
  }

  TrainingHooks hooks;
  hooks.checkpoint_dir = options.out;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    log << "epoch " << m.epoch << " loss " << m.train_loss << " dice wt/tc/et "
        << m.validation.per_region[0] << '/' << m.validation.per_region[1] << '/'
        << m.validation.per_region[2] << '\n';
  };
  const auto start = std::chrono::steady_clock::now();
  const TrainingResult result = train(network, config, volumes, hooks);

  Json doc;
  doc["spec"] = options.spec;
  doc["mode"] = to_string(config.mode);
  doc["seed"] = config.seed;
  doc["subjects"] = volumes.size();
  doc["epochs"] = result.epochs.size();
  doc["best_epoch"] = result.best_epoch;
  doc["best_validation"] = region_json(result.best_validation);
  doc["final_validation"] = result.epochs.empty() ? Json(nullptr)
                                                  : region_json(result.epochs.back().validation);
  doc["stopped_early"] = result.stopped_early;
  doc["reached_target"] = result.reached_target;
  std::int64_t peak = 0;
  for (const EpochMetrics& m : result.epochs) peak = std::max(peak, m.peak_bytes);
  doc["peak_bytes"] = peak;
  doc["seconds"] = seconds_since(start);
  doc["out"] = options.out;
  doc["metrics"] = (fs::path(options.out) / "metrics.csv").string();
  doc["checkpoints"] = {(fs::path(options.out) / "best").string(),
                        (fs::path(options.out) / "final").string()};
  emit(out, doc);
  return kExitOk;
}

int run_eval(const EvalOptions& options, std::ostream& out, std::ostream& log) {
  if (options.checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (!fs::is_directory(options.checkpoint)) {
    throw UsageError("checkpoint directory not found: " + options.checkpoint);
  }
  const std::vector<LabeledVolume> volumes =
      load_volumes(options.data, options.synthetic, options.size, options.seed, log);
  Network network = Network::load(options.checkpoint);
  try {
    network.check_input(volumes.front().image.shape());
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  log << "evaluating " << volumes.size() << " volumes\n";
  const RegionDice dice = evaluate(network, volumes);
  Json doc;
  doc["checkpoint"] = options.checkpoint;
  doc["subjects"] = volumes.size();
  doc["dice"] = region_json(dice);
  emit(out, doc);
  return kExitOk;
}

int run_bench(const BenchOptions& options, std::ostream& out, std::ostream& log) {
  if (options.steps <= 0) throw UsageError("--steps must be positive");
  if (options.warmup < 0) throw UsageError("--warmup must be non-negative");
  const ArchitectureSpec spec = load_spec(options.spec);

  Shape input;
  {
    const Network probe(spec, options.seed);
    input = checked_input(probe, options.input_shape, 1);
  }
  log << "bench: " << options.warmup << " warm-up and " << options.steps
      << " timed steps per mode\n";
  const StepComparison result =
      compare_step_times(spec, input, options.steps, options.warmup, options.seed);
  auto timing_json = [](const ModeTiming& t) {
    return Json{{"mean_step_seconds", t.mean()},
                {"median_step_seconds", t.median()},
                {"min_step_seconds", t.min()},
                {"peak_bytes", t.peak_bytes}};
  };
  const double ratio = result.time_ratio();
  Json doc;
  doc["spec"] = options.spec;
  doc["input_shape"] = parse_int_list(options.input_shape, "--input-shape");
  doc["steps"] = options.steps;
  doc["warmup"] = options.warmup;
  doc["seed"] = options.seed;
  doc["reversible"] = timing_json(result.reversible);
  doc["reference"] = timing_json(result.reference);
  doc["time_ratio"] = ratio;
  doc["median_time_ratio"] = result.median_time_ratio();
  doc["expected_band"] = {1.2, 2.0};
  doc["within_band"] = ratio >= 1.2 && ratio <= 2.0;
  doc["peak_ratio"] =
      static_cast<double>(result.reversible.peak_bytes) /
      static_cast<double>(result.reference.peak_bytes);
  emit(out, doc);
  return kExitOk;
}

int run_synth(const SynthOptions& options, std::ostream& out, std::ostream& log) {
  if (options.out.empty()) throw UsageError("--out is required");
  if (options.count <= 0) throw UsageError("--count must be positive");
  if (options.size <= 0) throw UsageError("--size must be positive");
  log << "writing " << options.count << " synthetic volumes to " << options.out << '\n';
  Dataset dataset;
  dataset.volumes = generate_synthetic_set(options.seed ^ kDataSeedSalt, options.count, options.size);
  for (std::int64_t i = 0; i < options.count; ++i) {
    dataset.ids.push_back("synthetic_" + std::to_string(i));
  }
  save_dataset(options.out, dataset);
  Json doc;
  doc["out"] = options.out;
  doc["count"] = options.count;
  doc["size"] = options.size;
  doc["seed"] = options.seed;
  emit(out, doc);
  return kExitOk;
}

}  // namespace revvolnet::cli
