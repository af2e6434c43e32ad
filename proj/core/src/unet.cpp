// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/unet.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "revvolnet/kernels.hpp"
#include "revvolnet/ops.hpp"

namespace revvolnet {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kGroupNorm: return "group_norm";
    case LayerKind::kLeakyRelu: return "leaky_relu";
    case LayerKind::kMaxPool: return "max_pool";
    case LayerKind::kUpsample: return "upsample";
    case LayerKind::kConcat: return "concat";
    case LayerKind::kAdd: return "add";
    case LayerKind::kSequence: return "sequence";
    case LayerKind::kSigmoid: return "sigmoid";
  }
  return "unknown";
}

Saves layer_saves(LayerKind kind, ExecutionMode mode) {
  switch (kind) {
    case LayerKind::kConv:
    case LayerKind::kGroupNorm:
    case LayerKind::kLeakyRelu:
    case LayerKind::kMaxPool:
      return {true, false};
    case LayerKind::kSigmoid:
      return {false, true};
    case LayerKind::kSequence:
      return {false, mode == ExecutionMode::kReversible};
    default:
      return {false, false};
  }
}

std::vector<Fate> plan_retention(const std::vector<RetentionNode>& nodes) {
  const std::size_t n = nodes.size();
  std::vector<bool> read(n, false);
  std::vector<bool> only_sequences(n, true);
  std::vector<int> consumers(n, 0);
  for (const auto& node : nodes) {
    for (int in : node.inputs) {
      if (in == kNetworkInput) continue;
      const auto src = static_cast<std::size_t>(in);
      ++consumers[src];
      if (node.saves.inputs) read[src] = true;
      if (!node.sequence) only_sequences[src] = false;
    }
  }
  std::vector<Fate> fate(n, Fate::kDropped);
  for (std::size_t i = 0; i < n; ++i) {
    if (i + 1 == n || read[i]) {
      fate[i] = Fate::kRetained;
    } else if (nodes[i].saves.output) {
      const bool regenerable = nodes[i].sequence && consumers[i] > 0 && only_sequences[i];
      fate[i] = regenerable ? Fate::kRegenerated : Fate::kRetained;
    }
  }
  return fate;
}

std::int64_t Layer::parameter_count() const {
  if (sequence) return sequence->parameter_count();
  std::int64_t n = 0;
  if (weight) n += weight->value.element_count();
  if (bias) n += bias->value.element_count();
  return n;
}

Network::Network(const ArchitectureSpec& spec, std::uint64_t seed)
    : spec_(spec), registry_(std::make_unique<ParameterRegistry>()), rng_(seed) {
  spec_.validate();
  if (spec_.reversible) {
    build_reversible();
  } else {
    build_baseline();
  }
}

int Network::push(Layer layer) {
  layer.level = level_;
  layer.decoder = decoder_;
  layers_.push_back(std::move(layer));
  return static_cast<int>(layers_.size()) - 1;
}

int Network::add_conv(const std::string& name, int input, std::int64_t in_ch,
                      std::int64_t out_ch, std::int64_t kernel) {
  Layer layer;
  layer.kind = LayerKind::kConv;
  layer.name = name;
  layer.inputs = {input};
  const Shape kernel_shape(out_ch, in_ch, kernel, kernel, kernel);
  layer.weight = &registry_->create(name + ".weight", he_normal(kernel_shape, rng_));
  layer.bias = &registry_->create(name + ".bias", Tensor::zeros(Shape(1, out_ch, 1, 1, 1)));
  return push(std::move(layer));
}

int Network::add_norm(const std::string& name, int input, std::int64_t channels) {
  Layer layer;
  layer.kind = LayerKind::kGroupNorm;
  layer.name = name;
  layer.inputs = {input};
  const Shape s(1, channels, 1, 1, 1);
  layer.weight = &registry_->create(name + ".gamma", Tensor::full(s, 1.0f));
  layer.bias = &registry_->create(name + ".beta", Tensor::zeros(s));
  return push(std::move(layer));
}

int Network::add_op(LayerKind kind, const std::string& name, std::vector<int> inputs) {
  Layer layer;
  layer.kind = kind;
  layer.name = name;
  layer.inputs = std::move(inputs);
  return push(std::move(layer));
}

// Pre-activation unit: norm, activation, convolution.
int Network::add_unit(const std::string& name, int input, std::int64_t in_ch,
                      std::int64_t out_ch) {
  int x = add_norm(name + ".norm", input, in_ch);
  x = add_op(LayerKind::kLeakyRelu, name + ".act", {x});
  return add_conv(name + ".conv", x, in_ch, out_ch, spec_.kernel_size);
}

int Network::add_sequence(const std::string& name, int input, std::int64_t channels,
                          std::int64_t depth) {
  if (depth == 0) return input;
  ResidualSettings settings;
  settings.kernel_size = spec_.kernel_size;
  settings.group_size = spec_.group_size;
  sequences_.push_back(
      std::make_unique<ReversibleSequence>(*registry_, name, channels, depth, settings, rng_));
  Layer layer;
  layer.kind = LayerKind::kSequence;
  layer.name = name;
  layer.inputs = {input};
  layer.sequence = sequences_.back().get();
  return push(std::move(layer));
}

// Conventional levels: two pre-activation units per block. The first unit of
// a level changes the width, the last unit before an upsampling step reduces
// it to the next level's width so that skips can be added.
void Network::build_baseline() {
  const auto& w = spec_.levels;
  const int depth = static_cast<int>(w.size());
  const std::int64_t enc_units = 2 * spec_.encoder_blocks;
  const std::int64_t dec_units = 2 * spec_.decoder_blocks;
  std::vector<int> skips(w.size(), kNetworkInput);

  int x = kNetworkInput;
  for (int i = 0; i < depth; ++i) {
    level_ = i;
    const std::string prefix = "enc" + std::to_string(i);
    std::int64_t in_ch;
    std::int64_t first = 0;
    if (i == 0) {
      x = add_conv(prefix + ".conv_in", x, spec_.in_channels, w[0], spec_.kernel_size);
      in_ch = w[0];
      first = 1;
    } else {
      x = add_op(LayerKind::kMaxPool, prefix + ".pool", {x});
      in_ch = w[i - 1];
    }
    for (std::int64_t u = first; u < enc_units; ++u) {
      const bool bottom_last = i == depth - 1 && u == enc_units - 1;
      const std::int64_t out_ch = bottom_last ? w[i - 1] : w[i];
      x = add_unit(prefix + ".unit" + std::to_string(u), x, in_ch, out_ch);
      in_ch = out_ch;
    }
    skips[i] = x;
  }

  decoder_ = true;
  for (int i = depth - 2; i >= 0; --i) {
    level_ = i;
    const std::string prefix = "dec" + std::to_string(i);
    const int up = add_op(LayerKind::kUpsample, prefix + ".up", {x});
    x = add_op(LayerKind::kAdd, prefix + ".skip", {skips[i], up});
    for (std::int64_t u = 0; u < dec_units; ++u) {
      const bool reduce = i > 0 && u == dec_units - 1;
      x = add_unit(prefix + ".unit" + std::to_string(u), x, w[i], reduce ? w[i - 1] : w[i]);
    }
  }
  level_ = 0;
  x = add_conv("head.conv", x, w[0], spec_.out_regions, spec_.head_kernel_size);
  add_op(LayerKind::kSigmoid, "head.sigmoid", {x});
}

void Network::build_reversible() {
  const auto& w = spec_.levels;
  const int depth = static_cast<int>(w.size());
  std::vector<int> skips(w.size(), kNetworkInput);

  int x = add_conv("stem.conv", kNetworkInput, spec_.in_channels, w[0], spec_.stem_kernel_size);
  for (int i = 0; i < depth; ++i) {
    level_ = i;
    const std::string prefix = "enc" + std::to_string(i);
    if (i > 0) {
      x = add_op(LayerKind::kMaxPool, prefix + ".pool", {x});
      x = add_conv(prefix + ".widen", x, w[i - 1], w[i], 1);
    }
    x = add_sequence(prefix + ".seq", x, w[i], spec_.encoder_blocks);
    skips[i] = x;
  }

  // Decoder: each level's sequence runs at the level width, then a pointwise
  // conv narrows to the next level's width before upsampling and the
  // additive skip, mirroring the baseline.
  decoder_ = true;
  for (int i = depth - 1; i >= 0; --i) {
    level_ = i;
    const std::string prefix = "dec" + std::to_string(i);
    x = add_sequence(prefix + ".seq", x, w[i], spec_.decoder_blocks);
    if (i == 0) break;
    x = add_conv(prefix + ".narrow", x, w[i], w[i - 1], 1);
    x = add_op(LayerKind::kUpsample, prefix + ".up", {x});
    level_ = i - 1;
    x = add_op(LayerKind::kAdd, "dec" + std::to_string(i - 1) + ".skip", {skips[i - 1], x});
  }
  level_ = 0;
  x = add_conv("head.conv", x, w[0], spec_.out_regions, spec_.head_kernel_size);
  add_op(LayerKind::kSigmoid, "head.sigmoid", {x});
}

std::vector<const ReversibleSequence*> Network::sequences() const {
  std::vector<const ReversibleSequence*> out;
  for (const auto& s : sequences_) out.push_back(s.get());
  return out;
}

std::vector<int> Network::consumer_counts() const {
  std::vector<int> counts(layers_.size(), 0);
  for (const auto& layer : layers_) {
    for (int in : layer.inputs) {
      if (in != kNetworkInput) ++counts[static_cast<std::size_t>(in)];
    }
  }
  return counts;
}

std::vector<Fate> Network::retention(ExecutionMode mode) const {
  std::vector<RetentionNode> nodes;
  for (const auto& layer : layers_) {
    nodes.push_back({layer.inputs, layer_saves(layer.kind, mode),
                     layer.kind == LayerKind::kSequence});
  }
  return plan_retention(nodes);
}

void Network::check_input(const Shape& input) const {
  if (input.channels() != spec_.in_channels) {
    throw std::invalid_argument("network input " + input.to_string() + ": expected " +
                                std::to_string(spec_.in_channels) + " channels");
  }
  const std::int64_t divisor = spec_.spatial_divisor();
  for (int axis = 2; axis < 5; ++axis) {
    if (input.dims[axis] % divisor != 0) {
      throw std::invalid_argument("network input " + input.to_string() +
                                  ": spatial extents must be divisible by " +
                                  std::to_string(divisor));
    }
  }
}

std::vector<Shape> Network::infer_shapes(const Shape& input) const {
  check_input(input);
  std::vector<Shape> shapes;
  shapes.reserve(layers_.size());
  auto in = [&](const Layer& layer, std::size_t i) {
    const int src = layer.inputs[i];
    return src == kNetworkInput ? input : shapes[static_cast<std::size_t>(src)];
  };
  for (const auto& layer : layers_) {
    Shape s = in(layer, 0);
    switch (layer.kind) {
      case LayerKind::kConv:
        s = s.with_channels(layer.weight->value.shape().dims[0]);
        break;
      case LayerKind::kMaxPool:
        for (int a = 2; a < 5; ++a) s.dims[a] /= 2;
        break;
      case LayerKind::kUpsample:
        for (int a = 2; a < 5; ++a) s.dims[a] *= 2;
        break;
      case LayerKind::kConcat:
        s = s.with_channels(s.channels() + in(layer, 1).channels());
        break;
      default:
        break;
    }
    shapes.push_back(s);
  }
  return shapes;
}

Shape Network::output_shape(const Shape& input) const { return infer_shapes(input).back(); }

Var Network::forward(Var input, ExecutionMode mode) const {
  check_input(input.shape());
  Tape& tape = *input.tape;
  const auto fate = retention(mode);
  auto remaining = consumer_counts();
  std::vector<Var> values;
  values.reserve(layers_.size());
  for (const auto& layer : layers_) {
    auto arg = [&](std::size_t i) {
      const int src = layer.inputs[i];
      return src == kNetworkInput ? input : values[static_cast<std::size_t>(src)];
    };
    switch (layer.kind) {
      case LayerKind::kConv:
        values.push_back(conv3d_same(arg(0), *layer.weight, *layer.bias));
        break;
      case LayerKind::kGroupNorm:
        values.push_back(group_norm(arg(0), *layer.weight, *layer.bias, spec_.group_size));
        break;
      case LayerKind::kLeakyRelu: values.push_back(leaky_relu(arg(0))); break;
      case LayerKind::kMaxPool: values.push_back(max_pool2(arg(0))); break;
      case LayerKind::kUpsample: values.push_back(upsample2(arg(0))); break;
      case LayerKind::kConcat: values.push_back(concat_channels(arg(0), arg(1))); break;
      case LayerKind::kAdd: values.push_back(add(arg(0), arg(1))); break;
      case LayerKind::kSigmoid: values.push_back(sigmoid(arg(0))); break;
      case LayerKind::kSequence: {
        // The last reader of a dropped activation can rebuild it by inversion.
        const int src = layer.inputs[0];
        const bool release = mode == ExecutionMode::kReversible && src != kNetworkInput &&
                             remaining[static_cast<std::size_t>(src)] == 1 &&
                             fate[static_cast<std::size_t>(src)] != Fate::kRetained;
        values.push_back(layer.sequence->forward(arg(0), mode, release));
        break;
      }
    }
    for (int src : layer.inputs) {
      if (src == kNetworkInput) continue;
      const auto i = static_cast<std::size_t>(src);
      if (--remaining[i] == 0 && fate[i] != Fate::kRetained && tape.node(values[i].index).live) {
        tape.release(values[i], nullptr);
      }
    }
  }
  return values.back();
}

Tensor Network::predict(const Tensor& volume) const {
  check_input(volume.shape());
  auto remaining = consumer_counts();
  std::vector<Tensor> values(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    auto arg = [&](std::size_t i) -> const Tensor& {
      const int src = layer.inputs[i];
      return src == kNetworkInput ? volume : values[static_cast<std::size_t>(src)];
    };
    Tensor out;
    switch (layer.kind) {
      case LayerKind::kConv:
        out = kernels::conv3d(arg(0), layer.weight->value, layer.bias->value,
                              kernels::same_padding(layer.weight->value.shape()));
        break;
      case LayerKind::kGroupNorm:
        out = kernels::group_norm(arg(0), layer.weight->value, layer.bias->value,
                                  spec_.group_size, kGroupNormEpsilon);
        break;
      case LayerKind::kLeakyRelu: out = kernels::leaky_relu(arg(0), kLeakyReluSlope); break;
      case LayerKind::kMaxPool: out = kernels::max_pool2(arg(0)); break;
      case LayerKind::kUpsample: out = kernels::upsample2(arg(0)); break;
      case LayerKind::kConcat: out = kernels::concat_channels(arg(0), arg(1)); break;
      case LayerKind::kAdd: out = arg(0) + arg(1); break;
      case LayerKind::kSigmoid: out = kernels::sigmoid(arg(0)); break;
      case LayerKind::kSequence: out = layer.sequence->forward(arg(0)); break;
    }
    values[l] = std::move(out);
    for (int src : layer.inputs) {
      if (src != kNetworkInput && --remaining[static_cast<std::size_t>(src)] == 0) {
        values[static_cast<std::size_t>(src)].release();
      }
    }
  }
  return std::move(values.back());
}

namespace {

constexpr const char* kManifestHeader = "revvolnet-checkpoint 1";

std::string shape_list(const Shape& s) {
  std::string out;
  for (int a = 0; a < 5; ++a) {
    if (a) out += ',';
    out += std::to_string(s.dims[a]);
  }
  return out;
}

}  // namespace

void Network::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  spec_.save((fs::path(dir) / "architecture.txt").string());
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  std::ofstream params(fs::path(dir) / "parameters.rvt", std::ios::binary);
  if (!manifest || !params) throw std::runtime_error("cannot write checkpoint into " + dir);
  manifest << kManifestHeader << '\n';
  for (const auto& p : *registry_) {
    manifest << p.id << ' ' << p.name << ' ' << shape_list(p.value.shape()) << '\n';
    write_tensor(params, p.value);
  }
  if (!manifest || !params) throw std::runtime_error("failed writing checkpoint into " + dir);
}

Network Network::load(const std::string& dir) {
  namespace fs = std::filesystem;
  Network net(ArchitectureSpec::load((fs::path(dir) / "architecture.txt").string()));
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  std::ifstream params(fs::path(dir) / "parameters.rvt", std::ios::binary);
  if (!manifest || !params) throw std::runtime_error("incomplete checkpoint in " + dir);
  std::string line;
  std::getline(manifest, line);
  if (line != kManifestHeader) throw std::runtime_error(dir + ": unrecognized manifest header");
  for (auto& p : *net.registry_) {
    if (!std::getline(manifest, line)) {
      throw std::runtime_error(dir + ": manifest ends before parameter " + p.name);
    }
    std::istringstream fields(line);
    std::uint64_t id = 0;
    std::string name, shape;
    fields >> id >> name >> shape;
    if (id != p.id || name != p.name || shape != shape_list(p.value.shape())) {
      throw std::runtime_error(dir + ": manifest entry '" + line + "' does not match parameter " +
                               std::to_string(p.id) + " " + p.name + " " +
                               shape_list(p.value.shape()));
    }
    Tensor value = read_tensor(params);
    if (value.shape() != p.value.shape()) {
      throw std::runtime_error(dir + ": stored tensor for " + p.name + " has shape " +
                               value.shape().to_string());
    }
    p.value = std::move(value);
  }
  if (std::getline(manifest, line) && !line.empty()) {
    throw std::runtime_error(dir + ": manifest lists more parameters than the architecture");
  }
  return net;
}

}  // namespace revvolnet
