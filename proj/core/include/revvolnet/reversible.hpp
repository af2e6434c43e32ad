// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reversible blocks and sequences.
//
// A block maps channel halves (x1, x2) to
//     y1 = x1 + F(x2)
//     y2 = x2 + G(y1)
// and is undone by
//     x2 = y2 - G(y1)
//     x1 = y1 - F(x2).
// A sequence chains blocks and keeps only its final output on the tape. Its
// backward walks the blocks in reverse, reconstructing each block's inputs
// from its outputs and re-running F and G to obtain gradients, so transient
// memory is bounded by a single block regardless of depth.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "revvolnet/kernels.hpp"
#include "revvolnet/ops.hpp"
#include "revvolnet/random.hpp"
#include "revvolnet/tape.hpp"

namespace revvolnet {

struct ResidualSettings {
  std::int64_t kernel_size = 3;
  std::int64_t group_size = kGroupSize;
  float epsilon = kGroupNormEpsilon;
  float slope = kLeakyReluSlope;
};

/// Channel-preserving GroupNorm -> LeakyReLU -> Conv unit used for F and G.
class ResidualFunction {
 public:
  ResidualFunction(ParameterRegistry& registry, const std::string& name, std::int64_t channels,
                   const ResidualSettings& settings, Rng& rng);

  Tensor apply(const Tensor& input) const;
  Var record(Var input) const;

  /// Subtracts fn(input) from `target` and returns the vector-Jacobian
  /// product of grad_output with respect to input, accumulating parameter
  /// gradients. Both steps share one set of intermediates.
  Tensor subtract_and_backward(const Tensor& input, Tensor& target,
                               const Tensor& grad_output) const;

  std::int64_t channels() const { return channels_; }
  std::vector<Parameter*> parameters() const { return {gamma_, beta_, weight_, bias_}; }
  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }
  Parameter& gamma() const { return *gamma_; }
  Parameter& beta() const { return *beta_; }

 private:
  std::int64_t channels_;
  ResidualSettings settings_;
  kernels::Padding pad_;
  Parameter* gamma_;
  Parameter* beta_;
  Parameter* weight_;
  Parameter* bias_;
};

/// Result of one block's backward step: reconstructed inputs and their gradients.
struct BlockBackward {
  Tensor x1, x2;
  Tensor grad_x1, grad_x2;
};

class ReversibleBlock {
 public:
  /// `channels` is the block's total width; F and G act on channels / 2.
  ReversibleBlock(ParameterRegistry& registry, const std::string& name, std::int64_t channels,
                  const ResidualSettings& settings, Rng& rng);

  std::pair<Tensor, Tensor> forward(const Tensor& x1, const Tensor& x2) const;
  std::pair<Tensor, Tensor> inverse(const Tensor& y1, const Tensor& y2) const;

  /// Reconstructs the inputs from (y1, y2), accumulates parameter gradients
  /// and returns the input gradients.
  BlockBackward backward(Tensor y1, Tensor y2, Tensor grad_y1, Tensor grad_y2) const;

  /// Records the block with every interior activation kept on the tape.
  std::pair<Var, Var> record(Var x1, Var x2) const;

  std::int64_t channels() const { return 2 * f_.channels(); }
  const ResidualFunction& f() const { return f_; }
  const ResidualFunction& g() const { return g_; }
  std::vector<Parameter*> parameters() const;

 private:
  ResidualFunction f_;
  ResidualFunction g_;
};

enum class ExecutionMode {
  /// Retain only the sequence output; reconstruct interiors in backward.
  kReversible,
  /// Record every block interior on the tape (conventional backprop).
  kStoredActivations,
};

const char* to_string(ExecutionMode mode);

class ReversibleSequence {
 public:
  ReversibleSequence(ParameterRegistry& registry, const std::string& name, std::int64_t channels,
                     std::int64_t depth, const ResidualSettings& settings, Rng& rng);

  std::int64_t channels() const { return channels_; }
  std::size_t depth() const { return blocks_.size(); }
  const std::vector<ReversibleBlock>& blocks() const { return blocks_; }
  std::vector<Parameter*> parameters() const;
  std::int64_t parameter_count() const;

  Tensor forward(const Tensor& input) const;
  Tensor inverse(const Tensor& output) const;

  /// Records the sequence on input's tape. In reversible mode this adds a
  /// single node; with release_input the producer of `input` is released and
  /// regenerated on demand by inverting the retained output.
  Var forward(Var input, ExecutionMode mode, bool release_input = false) const;

  /// Gradient with respect to the sequence input given the retained output
  /// and its gradient. Parameter gradients are accumulated. Both tensors are
  /// consumed so their buffers can be freed early. If `input` is given, the
  /// reconstructed sequence input is stored there.
  Tensor backward(Tensor output, Tensor grad_output, Tensor* input = nullptr) const;

 private:
  void check_input(const Shape& shape, const char* what) const;

  std::int64_t channels_;
  std::vector<ReversibleBlock> blocks_;
};

}  // namespace revvolnet
