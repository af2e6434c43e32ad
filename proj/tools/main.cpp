// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

using namespace revvolnet::cli;

struct Options {
  GradcheckOptions gradcheck;
  InvertOptions invert;
  EstimateOptions estimate;
  TrainOptions train;
  EvalOptions eval;
  BenchOptions bench;
  SynthOptions synth;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reversible 3D U-Net training, verification and memory estimation"};
  app.require_subcommand(1);
  Options o;

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference and reversible gradient checks");
  gradcheck->add_option("--spec", o.gradcheck.spec, "Also compare a whole network from this spec");
  gradcheck->add_option("--seed", o.gradcheck.seed, "Random seed");
  gradcheck->add_option("--depth", o.gradcheck.depth, "Blocks in the checked sequence");
  gradcheck->add_option("--inject-fault", o.gradcheck.inject_fault,
                        "Corrupt the backward of this op (test hook)");

  auto* invert = app.add_subcommand("invert", "Round-trip random reversible blocks");
  invert->add_option("--seed", o.invert.seed, "Random seed");
  invert->add_option("--trials", o.invert.trials, "Number of random blocks");
  invert->add_option("--channels", o.invert.channels, "Block width");
  invert->add_option("--extent", o.invert.extent, "Spatial extent of the test volumes");
  invert->add_option("--tolerance", o.invert.tolerance, "Largest acceptable error");

  auto* estimate = app.add_subcommand("estimate-memory", "Analytic training-memory estimate");
  estimate->add_option("--spec", o.estimate.spec, "Architecture file")->required();
  estimate->add_option("--input-shape", o.estimate.input_shape, "Extents d,h,w")->required();
  estimate->add_option("--batch", o.estimate.batch, "Batch size");
  estimate->add_option("--compare", o.estimate.compare, "Second architecture to compare against");
  estimate->add_flag("--measure", o.estimate.measure, "Run one real training step and record its peak");
  estimate->add_option("--optimizer-multiplier", o.estimate.optimizer_multiplier,
                       "Buffers per parameter");
  estimate->add_option("--format", o.estimate.format, "json or table");
  estimate->add_option("--seed", o.estimate.seed, "Random seed for --measure");

  auto* train = app.add_subcommand("train", "Train a network");
  train->add_option("--spec", o.train.spec, "Architecture file")->required();
  train->add_option("--config", o.train.config, "Training configuration file");
  auto* train_data = train->add_option("--data", o.train.data, "Dataset directory");
  auto* train_synth = train->add_option("--synthetic", o.train.synthetic,
                                        "Generate this many synthetic volumes");
  train_data->excludes(train_synth);
  train->add_option("--size", o.train.size, "Extent of synthetic volumes");
  train->add_option("--out", o.train.out, "Output directory")->required();
  train->add_option("--seed", o.train.seed, "Overrides the config seed");
  train->add_option("--max-epochs", o.train.max_epochs, "Overrides the config epoch cap");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", o.eval.checkpoint, "Checkpoint directory")->required();
  auto* eval_data = eval->add_option("--data", o.eval.data, "Dataset directory");
  auto* eval_synth = eval->add_option("--synthetic", o.eval.synthetic,
                                      "Generate this many synthetic volumes");
  eval_data->excludes(eval_synth);
  eval->add_option("--size", o.eval.size, "Extent of synthetic volumes");
  eval->add_option("--seed", o.eval.seed, "Random seed for synthetic data");

  auto* bench = app.add_subcommand("bench", "Time reversible against stored-activation steps");
  bench->add_option("--spec", o.bench.spec, "Architecture file")->required();
  bench->add_option("--steps", o.bench.steps, "Timed steps per mode");
  bench->add_option("--warmup", o.bench.warmup, "Untimed steps per mode");
  bench->add_option("--input-shape", o.bench.input_shape, "Extents d,h,w");
  bench->add_option("--seed", o.bench.seed, "Random seed");

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  synth->add_option("--count", o.synth.count, "Number of volumes");
  synth->add_option("--size", o.synth.size, "Cubic extent");
  synth->add_option("--seed", o.synth.seed, "Random seed");
  synth->add_option("--out", o.synth.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gradcheck->parsed()) return run_gradcheck(o.gradcheck, std::cout, std::cerr);
    if (invert->parsed()) return run_invert(o.invert, std::cout, std::cerr);
    if (estimate->parsed()) return run_estimate(o.estimate, std::cout, std::cerr);
    if (train->parsed()) return run_train(o.train, std::cout, std::cerr);
    if (eval->parsed()) return run_eval(o.eval, std::cout, std::cerr);
    if (bench->parsed()) return run_bench(o.bench, std::cout, std::cerr);
    if (synth->parsed()) return run_synth(o.synth, std::cout, std::cerr);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitVerificationFailed;
  }
  return kExitUsage;
}
