// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Gradient and inversion checks shared by the tests, the command-line tool
// and the acceptance suite.
//
// Finite differences perturb one element at a time and evaluate the probe
// loss sum(w * y) through the double-precision reference forward of the op,
// while the analytic gradient comes from the float kernels on the tape. The
// float forward is checked against the same reference. An element passes when
//     |analytic - numeric| <= rel * max(|analytic|, |numeric|)
// or when the difference is at most the absolute floor. The reported error
// is |analytic - numeric| / max(|analytic|, |numeric|, floor / rel), so an
// element passes exactly when its error is at most rel.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "revvolnet/architecture.hpp"
#include "revvolnet/random.hpp"
#include "revvolnet/reference_ops.hpp"
#include "revvolnet/tape.hpp"

namespace revvolnet {

struct FiniteDifferenceSettings {
  double step = 1e-3;
  double relative_tolerance = 1e-3;
  double absolute_floor = 1e-5;
  /// Bound on max|float forward - reference| / max|reference|.
  double forward_tolerance = 1e-5;
};

struct OpCheck {
  std::string op;
  double worst_relative_error = 0.0;
  double worst_absolute_error = 0.0;
  /// Tensor and element of the worst error, e.g. "input0[17]".
  std::string worst_at;
  std::int64_t elements = 0;
  double forward_relative_error = 0.0;
  bool passed = true;
};

/// Builds the operation under test from leaves holding `inputs`.
using OpBuilder = std::function<Var(const std::vector<Var>&)>;
/// The same operation in double precision, on inputs and parameter values.
using ReferenceFn = std::function<reference::Array(const std::vector<reference::Array>&,
                                                   const std::vector<reference::Array>&)>;

OpCheck check_op_gradients(const std::string& op, const OpBuilder& build,
                           const ReferenceFn& reference, const std::vector<Tensor>& inputs,
                           const std::vector<Parameter*>& params, Rng& rng,
                           const FiniteDifferenceSettings& settings = {});

/// One check per primitive op, plus dice loss, on random tensors with
/// spatial extents of at most 4.
std::vector<OpCheck> finite_difference_suite(std::uint64_t seed,
                                             const FiniteDifferenceSettings& settings = {});

struct EquivalenceCheck {
  std::int64_t depth = 0;
  /// Largest over gradient tensors of max|rev - ref| / max|ref|.
  double worst_relative_error = 0.0;
  std::string worst_tensor;
  bool passed = true;
};

/// Reversible backward versus the stored-activation reference on a random
/// sequence of the given depth (2 x channels x extent^3 input).
EquivalenceCheck sequence_equivalence(std::uint64_t seed, std::int64_t depth,
                                      std::int64_t channels = 8, std::int64_t extent = 4,
                                      double tolerance = 1e-4);

/// The same comparison for every parameter of a whole network, on one
/// random input of the smallest admissible extent (at least 4).
EquivalenceCheck network_equivalence(const ArchitectureSpec& spec, std::uint64_t seed,
                                     double tolerance = 1e-4);

struct InversionCheck {
  std::int64_t trials = 0;
  double max_error = 0.0;
  bool passed = true;
};

/// Round trips random blocks (weights and inputs drawn from N(0, 1) x 0.1)
/// through forward and inverse.
InversionCheck inversion_trials(std::uint64_t seed, std::int64_t trials, std::int64_t channels = 8,
                                std::int64_t extent = 8, double tolerance = 1e-4);

}  // namespace revvolnet
