// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// U-Net construction. A Network is a parameter registry plus a flat layer
// plan in topological order; the taped forward, the untaped inference path
// and the memory estimator all interpret the same plan.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "revvolnet/architecture.hpp"
#include "revvolnet/reversible.hpp"
#include "revvolnet/tape.hpp"

namespace revvolnet {

enum class LayerKind {
  kConv,
  kGroupNorm,
  kLeakyRelu,
  kMaxPool,
  kUpsample,
  kConcat,
  kAdd,
  kSequence,
  kSigmoid,
};

const char* to_string(LayerKind kind);

/// Input index referring to the network input rather than a layer.
inline constexpr int kNetworkInput = -1;

struct Layer {
  LayerKind kind = LayerKind::kConv;
  std::string name;
  std::vector<int> inputs;
  int level = 0;
  bool decoder = false;
  /// Conv kernel and bias, or norm gamma and beta.
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  const ReversibleSequence* sequence = nullptr;

  std::int64_t parameter_count() const;
};

/// Which activations the backward of a layer kind reads.
Saves layer_saves(LayerKind kind, ExecutionMode mode);

/// What happens to an activation once its last consumer has run.
enum class Fate {
  kRetained,
  /// No backward reads it.
  kDropped,
  /// A sequence output read only by its own backward and consumed only by
  /// other sequences: dropped and rebuilt by inverting the consumer.
  kRegenerated,
};

struct RetentionNode {
  std::vector<int> inputs;
  Saves saves;
  bool sequence = false;
};

/// The last node is always retained (the loss reads it). Any other node is
/// retained if a consumer's backward reads its inputs or its own backward
/// reads its output, unless it is regenerable as described above.
std::vector<Fate> plan_retention(const std::vector<RetentionNode>& nodes);

class Network {
 public:
  explicit Network(const ArchitectureSpec& spec, std::uint64_t seed = 0);

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const ArchitectureSpec& spec() const { return spec_; }
  ParameterRegistry& registry() { return *registry_; }
  const ParameterRegistry& registry() const { return *registry_; }
  std::int64_t parameter_count() const { return registry_->element_count(); }

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<const ReversibleSequence*> sequences() const;
  /// Number of layers reading each layer's output.
  std::vector<int> consumer_counts() const;
  std::vector<Fate> retention(ExecutionMode mode) const;

  /// Rejects inputs with the wrong channel count or extents not divisible by
  /// 2^(levels - 1), naming the divisor.
  void check_input(const Shape& input) const;
  std::vector<Shape> infer_shapes(const Shape& input) const;
  Shape output_shape(const Shape& input) const;

  /// Records the network on the input's tape and returns sigmoid outputs.
  Var forward(Var input, ExecutionMode mode = ExecutionMode::kReversible) const;

  /// Whole-volume inference without a tape; buffers are freed as soon as
  /// their last consumer has run.
  Tensor predict(const Tensor& volume) const;

  /// Writes architecture.txt, manifest.txt and parameters.rvt into `dir`.
  void save(const std::string& dir) const;
  static Network load(const std::string& dir);

 private:
  int push(Layer layer);
  int add_conv(const std::string& name, int input, std::int64_t in_ch, std::int64_t out_ch,
               std::int64_t kernel);
  int add_norm(const std::string& name, int input, std::int64_t channels);
  int add_op(LayerKind kind, const std::string& name, std::vector<int> inputs);
  int add_unit(const std::string& name, int input, std::int64_t in_ch, std::int64_t out_ch);
  int add_sequence(const std::string& name, int input, std::int64_t channels, std::int64_t depth);

  void build_baseline();
  void build_reversible();

  ArchitectureSpec spec_;
  std::unique_ptr<ParameterRegistry> registry_;
  std::vector<std::unique_ptr<ReversibleSequence>> sequences_;
  std::vector<Layer> layers_;
  Rng rng_;
  int level_ = 0;
  bool decoder_ = false;
};

inline std::int64_t parameter_count(const Network& network) { return network.parameter_count(); }

}  // namespace revvolnet
