// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/verification.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "revvolnet/ops.hpp"
#include "revvolnet/reference_ops.hpp"
#include "revvolnet/reversible.hpp"
#include "revvolnet/training.hpp"
#include "revvolnet/unet.hpp"

namespace revvolnet {

namespace {

double probe_loss(const reference::Array& y, const Tensor& w) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < w.element_count(); ++i) {
    acc += y.values[static_cast<std::size_t>(i)] * static_cast<double>(w[i]);
  }
  return acc;
}

struct Comparison {
  const FiniteDifferenceSettings& settings;
  OpCheck& check;

  void operator()(double analytic, double numeric, const std::string& where) {
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max({std::abs(analytic), std::abs(numeric),
                                   settings.absolute_floor / settings.relative_tolerance});
    const double rel = diff / scale;
    ++check.elements;
    check.worst_absolute_error = std::max(check.worst_absolute_error, diff);
    if (rel > check.worst_relative_error || check.worst_at.empty()) {
      check.worst_relative_error = rel;
      check.worst_at = where;
    }
    if (rel > settings.relative_tolerance) check.passed = false;
  }
};

// Largest over tensors of max|candidate - reference| / max|reference|.
EquivalenceCheck compare_gradients(const std::vector<Tensor>& candidate,
                                   const std::vector<Tensor>& reference,
                                   const std::vector<std::string>& names, double tolerance) {
  EquivalenceCheck check;
  for (std::size_t k = 0; k < reference.size(); ++k) {
    float scale = 0.0f;
    for (float v : reference[k].data()) scale = std::max(scale, std::abs(v));
    const double diff = max_abs_diff(candidate[k], reference[k]);
    const double rel = scale > 0.0f ? diff / scale : diff;
    if (rel > check.worst_relative_error || check.worst_tensor.empty()) {
      check.worst_relative_error = rel;
      check.worst_tensor = names[k];
    }
  }
  check.passed = check.worst_relative_error <= tolerance;
  return check;
}

}  // namespace

OpCheck check_op_gradients(const std::string& op, const OpBuilder& build,
                           const ReferenceFn& reference, const std::vector<Tensor>& inputs,
                           const std::vector<Parameter*>& params, Rng& rng,
                           const FiniteDifferenceSettings& settings) {
  OpCheck check;
  check.op = op;

  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
  Var y = build(leaves);
  const Tensor w = random_normal(y.shape(), 1.0f, rng);

  std::vector<reference::Array> ref_inputs;
  for (const Tensor& t : inputs) ref_inputs.push_back(reference::from_tensor(t));
  std::vector<reference::Array> ref_params;
  for (const Parameter* p : params) ref_params.push_back(reference::from_tensor(p->value));
  const reference::Array ref_y = reference(ref_inputs, ref_params);
  if (ref_y.shape != y.shape()) {
    throw std::logic_error(op + ": reference output " + ref_y.shape.to_string() + " vs " +
                           y.shape().to_string());
  }
  check.forward_relative_error = reference::relative_difference(y.value(), ref_y);
  if (check.forward_relative_error > settings.forward_tolerance) check.passed = false;

  if (y.shape().element_count() > 0) tape.backward(y, w);
  std::vector<Tensor> input_grads;
  for (const Var& v : leaves) {
    const Tensor* g = tape.grad(v);
    input_grads.push_back(g ? *g : Tensor::zeros(v.shape()));
  }
  std::vector<Tensor> param_grads;
  for (Parameter* p : params) param_grads.push_back(p->grad);

  auto loss = [&] { return probe_loss(reference(ref_inputs, ref_params), w); };
  Comparison compare{settings, check};
  const double h = settings.step;
  auto sweep = [&](std::vector<reference::Array>& arrays, const std::vector<Tensor>& analytic,
                   const std::function<std::string(std::size_t)>& label) {
    for (std::size_t k = 0; k < arrays.size(); ++k) {
      for (std::size_t i = 0; i < arrays[k].values.size(); ++i) {
        double& v = arrays[k].values[i];
        const double original = v;
        v = original + h;
        const double up = loss();
        v = original - h;
        const double down = loss();
        v = original;
        compare(analytic[k][static_cast<std::int64_t>(i)], (up - down) / (2.0 * h),
                label(k) + "[" + std::to_string(i) + "]");
      }
    }
  };
  sweep(ref_inputs, input_grads, [](std::size_t k) { return "input" + std::to_string(k); });
  sweep(ref_params, param_grads, [&](std::size_t k) { return params[k]->name; });
  return check;
}

namespace {

// Values at least `gap` apart in random order, so max pooling has no ties
// and finite differences never cross a switch.
Tensor distinct_values(const Shape& shape, float gap, Rng& rng) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(shape.element_count()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Tensor out(shape);
  const float centre = static_cast<float>(shape.element_count()) / 2.0f;
  for (std::int64_t i = 0; i < shape.element_count(); ++i) {
    out[i] = (static_cast<float>(order[static_cast<std::size_t>(i)]) - centre) * gap;
  }
  return out;
}

// Inputs bounded away from the leaky ReLU kink.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
  Tensor out = random_normal(shape, 1.0f, rng);
  for (float& v : out.data()) v = v >= 0.0f ? v + 0.1f : v - 0.1f;
  return out;
}

void perturb(Parameter& p, float stddev, Rng& rng) {
  p.value += random_normal(p.value.shape(), stddev, rng);
}

}  // namespace

std::vector<OpCheck> finite_difference_suite(std::uint64_t seed,
                                             const FiniteDifferenceSettings& settings) {
  namespace ref = reference;
  using Arrays = std::vector<ref::Array>;
  Rng rng(seed);
  ParameterRegistry registry;
  std::vector<OpCheck> out;
  const Shape small(2, 2, 4, 4, 4);
  auto unary = [&](const std::string& op, Var (*taped)(Var), ref::Array (*oracle)(const ref::Array&),
                   Tensor input) {
    out.push_back(check_op_gradients(
        op, [taped](const std::vector<Var>& x) { return taped(x[0]); },
        [oracle](const Arrays& x, const Arrays&) { return oracle(x[0]); }, {std::move(input)}, {},
        rng, settings));
  };
  auto binary = [&](const std::string& op, Var (*taped)(Var, Var),
                    ref::Array (*oracle)(const ref::Array&, const ref::Array&), Tensor a, Tensor b) {
    out.push_back(check_op_gradients(
        op, [taped](const std::vector<Var>& x) { return taped(x[0], x[1]); },
        [oracle](const Arrays& x, const Arrays&) { return oracle(x[0], x[1]); },
        {std::move(a), std::move(b)}, {}, rng, settings));
  };

  {
    Parameter& w = registry.create("conv.weight", random_normal(Shape(3, 2, 3, 3, 3), 0.3f, rng));
    Parameter& b = registry.create("conv.bias", random_normal(Shape(1, 3, 1, 1, 1), 0.3f, rng));
    const kernels::Padding pad{1, 1, 1};
    out.push_back(check_op_gradients(
        "conv3d", [&](const std::vector<Var>& x) { return conv3d_same(x[0], w, b); },
        [pad](const Arrays& x, const Arrays& p) { return ref::conv3d(x[0], p[0], p[1], pad); },
        {random_normal(small, 1.0f, rng)}, {&w, &b}, rng, settings));
  }
  {
    Parameter& w = registry.create("pw.weight", random_normal(Shape(3, 2, 1, 1, 1), 0.5f, rng));
    Parameter& b = registry.create("pw.bias", random_normal(Shape(1, 3, 1, 1, 1), 0.5f, rng));
    out.push_back(check_op_gradients(
        "conv1x1x1", [&](const std::vector<Var>& x) { return conv1x1x1(x[0], w, b); },
        [](const Arrays& x, const Arrays& p) { return ref::conv3d(x[0], p[0], p[1], {}); },
        {random_normal(small, 1.0f, rng)}, {&w, &b}, rng, settings));
  }
  {
    Parameter& g = registry.create("gn.gamma", Tensor::full(Shape(1, 4, 1, 1, 1), 1.0f));
    Parameter& b = registry.create("gn.beta", Tensor::zeros(Shape(1, 4, 1, 1, 1)));
    perturb(g, 0.3f, rng);
    perturb(b, 0.3f, rng);
    out.push_back(check_op_gradients(
        "group_norm", [&](const std::vector<Var>& x) { return group_norm(x[0], g, b, 2, 1e-5f); },
        [](const Arrays& x, const Arrays& p) {
          return ref::group_norm(x[0], p[0], p[1], 2, static_cast<double>(1e-5f));
        },
        {random_normal(Shape(2, 4, 2, 2, 2), 1.0f, rng)}, {&g, &b}, rng, settings));
  }
  out.push_back(check_op_gradients(
      "leaky_relu", [](const std::vector<Var>& x) { return leaky_relu(x[0]); },
      [](const Arrays& x, const Arrays&) {
        return ref::leaky_relu(x[0], static_cast<double>(kLeakyReluSlope));
      },
      {away_from_zero(small, rng)}, {}, rng, settings));
  unary("max_pool2", max_pool2, ref::max_pool2, distinct_values(small, 0.01f, rng));
  unary("upsample2", upsample2, ref::upsample2, random_normal(Shape(1, 2, 2, 2, 2), 1.0f, rng));
  unary("sigmoid", sigmoid, ref::sigmoid, random_normal(small, 1.0f, rng));
  binary("concat_channels", concat_channels, ref::concat_channels,
         random_normal(Shape(1, 2, 2, 2, 2), 1.0f, rng),
         random_normal(Shape(1, 3, 2, 2, 2), 1.0f, rng));
  out.push_back(check_op_gradients(
      "slice_channels", [](const std::vector<Var>& x) { return slice_channels(x[0], 1, 3); },
      [](const Arrays& x, const Arrays&) { return ref::slice_channels(x[0], 1, 3); },
      {random_normal(Shape(2, 4, 2, 2, 2), 1.0f, rng)}, {}, rng, settings));
  binary("add", add, ref::add, random_normal(small, 1.0f, rng), random_normal(small, 1.0f, rng));
  binary("sub", sub, ref::sub, random_normal(small, 1.0f, rng), random_normal(small, 1.0f, rng));
  unary("sum", sum, ref::sum, random_normal(small, 1.0f, rng));
  {
    const Tensor weights = random_normal(small, 1.0f, rng);
    const ref::Array ref_weights = ref::from_tensor(weights);
    out.push_back(check_op_gradients(
        "weighted_sum", [&](const std::vector<Var>& x) { return weighted_sum(x[0], weights); },
        [&](const Arrays& x, const Arrays&) { return ref::weighted_sum(x[0], ref_weights); },
        {random_normal(small, 1.0f, rng)}, {}, rng, settings));
  }
  {
    const Shape regions(1, 3, 4, 4, 4);
    Tensor target(regions);
    std::bernoulli_distribution coin(0.4);
    for (float& v : target.data()) v = coin(rng) ? 1.0f : 0.0f;
    const ref::Array ref_target = ref::from_tensor(target);
    out.push_back(check_op_gradients(
        "dice_loss", [&](const std::vector<Var>& x) { return dice_loss(x[0], target, 1e-5); },
        [&](const Arrays& x, const Arrays&) { return ref::dice_loss(x[0], ref_target, 1e-5); },
        {random_uniform(regions, 0.05f, 0.95f, rng)}, {}, rng, settings));
  }
  return out;
}

EquivalenceCheck sequence_equivalence(std::uint64_t seed, std::int64_t depth,
                                      std::int64_t channels, std::int64_t extent,
                                      double tolerance) {
  Rng rng(seed);
  ParameterRegistry registry;
  ResidualSettings rs;
  rs.group_size = std::gcd(channels / 2, std::int64_t{2});
  ReversibleSequence seq(registry, "seq", channels, depth, rs, rng);
  std::vector<Parameter*> params = seq.parameters();
  for (Parameter* p : params) perturb(*p, 0.1f, rng);
  const Shape shape(2, channels, extent, extent, extent);
  const Tensor x = random_normal(shape, 1.0f, rng);
  const Tensor w = random_normal(shape, 1.0f, rng);

  auto run = [&](ExecutionMode mode) {
    for (Parameter* p : params) p->zero_grad();
    Tape tape;
    Var in = tape.leaf(x, true);
    Var y = seq.forward(in, mode);
    tape.backward(y, w);
    std::vector<Tensor> grads{tape.grad(in) ? *tape.grad(in) : Tensor::zeros(shape)};
    for (Parameter* p : params) grads.push_back(p->grad);
    return grads;
  };
  const auto reversible = run(ExecutionMode::kReversible);
  const auto reference = run(ExecutionMode::kStoredActivations);

  std::vector<std::string> names{"input"};
  for (Parameter* p : params) names.push_back(p->name);
  EquivalenceCheck check = compare_gradients(reversible, reference, names, tolerance);
  check.depth = depth;
  return check;
}

EquivalenceCheck network_equivalence(const ArchitectureSpec& spec, std::uint64_t seed,
                                     double tolerance) {
  Network network(spec, seed);
  Rng rng(seed ^ 0x5DEECE66DULL);
  for (Parameter& p : network.registry()) perturb(p, 0.1f, rng);
  const std::int64_t extent = std::max<std::int64_t>(4, spec.spatial_divisor());
  const Shape shape(1, spec.in_channels, extent, extent, extent);
  const Tensor x = random_normal(shape, 1.0f, rng);
  const Tensor w = random_normal(network.output_shape(shape), 1.0f, rng);

  auto run = [&](ExecutionMode mode) {
    network.registry().zero_grad();
    Tape tape;
    Var in = tape.leaf(x, true);
    Var y = network.forward(in, mode);
    tape.backward(y, w);
    std::vector<Tensor> grads{tape.grad(in) ? *tape.grad(in) : Tensor::zeros(shape)};
    for (const Parameter& p : network.registry()) grads.push_back(p.grad);
    return grads;
  };
  const auto reversible = run(ExecutionMode::kReversible);
  const auto reference = run(ExecutionMode::kStoredActivations);
  std::vector<std::string> names{"input"};
  for (const Parameter& p : network.registry()) names.push_back(p.name);
  EquivalenceCheck check = compare_gradients(reversible, reference, names, tolerance);
  check.depth = spec.encoder_blocks;
  return check;
}

InversionCheck inversion_trials(std::uint64_t seed, std::int64_t trials, std::int64_t channels,
                                std::int64_t extent, double tolerance) {
  if (trials < 0) throw std::invalid_argument("inversion_trials: negative trial count");
  Rng rng(seed);
  InversionCheck check;
  check.trials = trials;
  ResidualSettings rs;
  rs.group_size = std::gcd(channels / 2, std::int64_t{2});
  const Shape half(1, channels / 2, extent, extent, extent);
  for (std::int64_t t = 0; t < trials; ++t) {
    ParameterRegistry registry;
    ReversibleBlock block(registry, "block", channels, rs, rng);
    for (Parameter& p : registry) {
      if (p.name.ends_with(".weight") || p.name.ends_with(".bias")) {
        p.value = random_normal(p.value.shape(), 0.1f, rng);
      }
    }
    const Tensor x1 = random_normal(half, 0.1f, rng);
    const Tensor x2 = random_normal(half, 0.1f, rng);
    const auto [y1, y2] = block.forward(x1, x2);
    const auto [r1, r2] = block.inverse(y1, y2);
    check.max_error = std::max<double>(
        check.max_error, std::max(max_abs_diff(r1, x1), max_abs_diff(r2, x2)));
  }
  check.passed = check.max_error <= tolerance;
  return check;
}

}  // namespace revvolnet
