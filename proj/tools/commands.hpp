// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommands of the revvolnet tool. Each writes one JSON document to `out`
// and progress to `log`, and returns the process exit code.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace revvolnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerificationFailed = 1;
inline constexpr int kExitUsage = 2;

/// Invalid input detected before any work; mapped to kExitUsage.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GradcheckOptions {
  std::string spec;
  std::uint64_t seed = 1;
  std::int64_t depth = 3;
  std::string inject_fault;
};

struct InvertOptions {
  std::uint64_t seed = 1;
  std::int64_t trials = 100;
  std::int64_t channels = 8;
  std::int64_t extent = 8;
  double tolerance = 1e-4;
};

struct EstimateOptions {
  std::string spec;
  std::string input_shape;
  std::int64_t batch = 1;
  std::string compare;
  bool measure = false;
  std::int64_t optimizer_multiplier = 4;
  std::string format = "json";
  std::uint64_t seed = 1;
};

struct TrainOptions {
  std::string spec;
  std::string config;
  std::string data;
  std::optional<std::int64_t> synthetic;
  std::int64_t size = 32;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> max_epochs;
};

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::optional<std::int64_t> synthetic;
  std::int64_t size = 32;
  std::uint64_t seed = 1;
};

struct BenchOptions {
  std::string spec;
  std::string input_shape = "32,32,32";
  std::int64_t steps = 5;
  std::int64_t warmup = 1;
  std::uint64_t seed = 1;
};

struct SynthOptions {
  std::int64_t count = 25;
  std::int64_t size = 32;
  std::uint64_t seed = 1;
  std::string out;
};

int run_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& log);
int run_invert(const InvertOptions& options, std::ostream& out, std::ostream& log);
int run_estimate(const EstimateOptions& options, std::ostream& out, std::ostream& log);
int run_train(const TrainOptions& options, std::ostream& out, std::ostream& log);
int run_eval(const EvalOptions& options, std::ostream& out, std::ostream& log);
int run_bench(const BenchOptions& options, std::ostream& out, std::ostream& log);
int run_synth(const SynthOptions& options, std::ostream& out, std::ostream& log);

}  // namespace revvolnet::cli
