// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/reference_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace revvolnet::reference {

double& Array::at(std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) {
  const auto& d = shape.dims;
  return values[static_cast<std::size_t>((((n * d[1] + c) * d[2] + z) * d[3] + y) * d[4] + x)];
}

double Array::at(std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y,
                 std::int64_t x) const {
  const auto& d = shape.dims;
  return values[static_cast<std::size_t>((((n * d[1] + c) * d[2] + z) * d[3] + y) * d[4] + x)];
}

Array from_tensor(const Tensor& t) {
  Array a(t.shape());
  for (std::int64_t i = 0; i < t.element_count(); ++i) a.values[static_cast<std::size_t>(i)] = t[i];
  return a;
}

Tensor to_tensor(const Array& a) {
  Tensor t(a.shape);
  for (std::int64_t i = 0; i < t.element_count(); ++i) {
    t[i] = static_cast<float>(a.values[static_cast<std::size_t>(i)]);
  }
  return t;
}

double relative_difference(const Tensor& a, const Array& b) {
  if (a.shape() != b.shape) throw std::invalid_argument("relative_difference: shapes differ");
  double diff = 0.0;
  double scale = 1e-30;
  for (std::int64_t i = 0; i < a.element_count(); ++i) {
    const double ref = b.values[static_cast<std::size_t>(i)];
    diff = std::max(diff, std::abs(a[i] - ref));
    scale = std::max(scale, std::abs(ref));
  }
  return diff / scale;
}

Array conv3d(const Array& input, const Array& weight, const Array& bias, kernels::Padding pad) {
  const Shape& s = input.shape;
  const Shape& k = weight.shape;
  const std::int64_t od = s.depth() + 2 * pad.depth - k.dims[2] + 1;
  const std::int64_t oh = s.height() + 2 * pad.height - k.dims[3] + 1;
  const std::int64_t ow = s.width() + 2 * pad.width - k.dims[4] + 1;
  Array out(Shape(s.batch(), k.dims[0], od, oh, ow));
  for (std::int64_t n = 0; n < s.batch(); ++n)
    for (std::int64_t o = 0; o < k.dims[0]; ++o)
      for (std::int64_t z = 0; z < od; ++z)
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t x = 0; x < ow; ++x) {
            double acc = bias.values[static_cast<std::size_t>(o)];
            for (std::int64_t i = 0; i < k.dims[1]; ++i)
              for (std::int64_t a = 0; a < k.dims[2]; ++a)
                for (std::int64_t b = 0; b < k.dims[3]; ++b)
                  for (std::int64_t c = 0; c < k.dims[4]; ++c) {
                    const std::int64_t iz = z + a - pad.depth;
                    const std::int64_t iy = y + b - pad.height;
                    const std::int64_t ix = x + c - pad.width;
                    if (iz < 0 || iz >= s.depth() || iy < 0 || iy >= s.height() || ix < 0 ||
                        ix >= s.width()) {
                      continue;
                    }
                    acc += weight.at(o, i, a, b, c) * input.at(n, i, iz, iy, ix);
                  }
            out.at(n, o, z, y, x) = acc;
          }
  return out;
}

Array group_norm(const Array& input, const Array& gamma, const Array& beta,
                 std::int64_t group_size, double epsilon) {
  const Shape& s = input.shape;
  Array out(s);
  const std::int64_t plane = s.spatial();
  for (std::int64_t n = 0; n < s.batch(); ++n) {
    for (std::int64_t g = 0; g < s.channels() / group_size; ++g) {
      const auto first = static_cast<std::size_t>((n * s.channels() + g * group_size) * plane);
      const auto count = static_cast<std::size_t>(group_size * plane);
      double mean = 0.0;
      for (std::size_t i = 0; i < count; ++i) mean += input.values[first + i];
      mean /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        var += (input.values[first + i] - mean) * (input.values[first + i] - mean);
      }
      var /= static_cast<double>(count);
      for (std::size_t i = 0; i < count; ++i) {
        const auto c = static_cast<std::size_t>(g * group_size) + i / static_cast<std::size_t>(plane);
        out.values[first + i] =
            gamma.values[c] * (input.values[first + i] - mean) / std::sqrt(var + epsilon) +
            beta.values[c];
      }
    }
  }
  return out;
}

Array leaky_relu(const Array& input, double slope) {
  Array out = input;
  for (double& v : out.values) v = v >= 0.0 ? v : slope * v;
  return out;
}

Array max_pool2(const Array& input) {
  const Shape& s = input.shape;
  Array out(Shape(s.batch(), s.channels(), s.depth() / 2, s.height() / 2, s.width() / 2));
  for (std::int64_t n = 0; n < s.batch(); ++n)
    for (std::int64_t c = 0; c < s.channels(); ++c)
      for (std::int64_t z = 0; z < s.depth() / 2; ++z)
        for (std::int64_t y = 0; y < s.height() / 2; ++y)
          for (std::int64_t x = 0; x < s.width() / 2; ++x) {
            double best = input.at(n, c, 2 * z, 2 * y, 2 * x);
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int d = 0; d < 2; ++d) {
                  best = std::max(best, input.at(n, c, 2 * z + a, 2 * y + b, 2 * x + d));
                }
            out.at(n, c, z, y, x) = best;
          }
  return out;
}

namespace {

// Source position of output index j under half-pixel sampling, clamped to
// the input.
struct Tap {
  std::int64_t lo, hi;
  double w_hi;
};

Tap tap(std::int64_t j, std::int64_t extent) {
  const double src = std::max(0.0, (static_cast<double>(j) + 0.5) / 2.0 - 0.5);
  const auto lo = static_cast<std::int64_t>(std::floor(src));
  return {lo, std::min(lo + 1, extent - 1), src - static_cast<double>(lo)};
}

}  // namespace

Array upsample2(const Array& input) {
  const Shape& s = input.shape;
  Array out(Shape(s.batch(), s.channels(), 2 * s.depth(), 2 * s.height(), 2 * s.width()));
  for (std::int64_t n = 0; n < s.batch(); ++n)
    for (std::int64_t c = 0; c < s.channels(); ++c)
      for (std::int64_t z = 0; z < 2 * s.depth(); ++z)
        for (std::int64_t y = 0; y < 2 * s.height(); ++y)
          for (std::int64_t x = 0; x < 2 * s.width(); ++x) {
            const Tap tz = tap(z, s.depth()), ty = tap(y, s.height()), tx = tap(x, s.width());
            double acc = 0.0;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int d = 0; d < 2; ++d) {
                  const double w = (a ? tz.w_hi : 1.0 - tz.w_hi) * (b ? ty.w_hi : 1.0 - ty.w_hi) *
                                   (d ? tx.w_hi : 1.0 - tx.w_hi);
                  acc += w * input.at(n, c, a ? tz.hi : tz.lo, b ? ty.hi : ty.lo,
                                      d ? tx.hi : tx.lo);
                }
            out.at(n, c, z, y, x) = acc;
          }
  return out;
}

Array sigmoid(const Array& input) {
  Array out = input;
  for (double& v : out.values) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

Array concat_channels(const Array& a, const Array& b) {
  const Shape& sa = a.shape;
  const Shape& sb = b.shape;
  Array out(sa.with_channels(sa.channels() + sb.channels()));
  for (std::int64_t n = 0; n < sa.batch(); ++n)
    for (std::int64_t c = 0; c < out.shape.channels(); ++c)
      for (std::int64_t z = 0; z < sa.depth(); ++z)
        for (std::int64_t y = 0; y < sa.height(); ++y)
          for (std::int64_t x = 0; x < sa.width(); ++x) {
            out.at(n, c, z, y, x) = c < sa.channels() ? a.at(n, c, z, y, x)
                                                      : b.at(n, c - sa.channels(), z, y, x);
          }
  return out;
}

Array slice_channels(const Array& input, std::int64_t begin, std::int64_t end) {
  const Shape& s = input.shape;
  Array out(s.with_channels(end - begin));
  for (std::int64_t n = 0; n < s.batch(); ++n)
    for (std::int64_t c = begin; c < end; ++c)
      for (std::int64_t z = 0; z < s.depth(); ++z)
        for (std::int64_t y = 0; y < s.height(); ++y)
          for (std::int64_t x = 0; x < s.width(); ++x) {
            out.at(n, c - begin, z, y, x) = input.at(n, c, z, y, x);
          }
  return out;
}

Array add(const Array& a, const Array& b) {
  Array out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
  return out;
}

Array sub(const Array& a, const Array& b) {
  Array out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= b.values[i];
  return out;
}

Array sum(const Array& input) {
  Array out(Shape(1, 1, 1, 1, 1));
  for (double v : input.values) out.values[0] += v;
  return out;
}

Array weighted_sum(const Array& input, const Array& weights) {
  Array out(Shape(1, 1, 1, 1, 1));
  for (std::size_t i = 0; i < input.values.size(); ++i) {
    out.values[0] += input.values[i] * weights.values[i];
  }
  return out;
}

Array dice_loss(const Array& pred, const Array& target, double epsilon) {
  const Shape& s = pred.shape;
  Array out(Shape(1, 1, 1, 1, 1));
  const std::int64_t plane = s.spatial();
  for (std::int64_t c = 0; c < s.channels(); ++c) {
    double overlap = 0.0, p = 0.0, g = 0.0;
    for (std::int64_t n = 0; n < s.batch(); ++n) {
      const auto first = static_cast<std::size_t>((n * s.channels() + c) * plane);
      for (std::size_t i = 0; i < static_cast<std::size_t>(plane); ++i) {
        overlap += pred.values[first + i] * target.values[first + i];
        p += pred.values[first + i];
        g += target.values[first + i];
      }
    }
    out.values[0] += 1.0 - (2.0 * overlap + epsilon) / (p + g + epsilon);
  }
  return out;
}

}  // namespace revvolnet::reference
