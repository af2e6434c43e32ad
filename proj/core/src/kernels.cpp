// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "revvolnet/parallel.hpp"

namespace revvolnet::kernels {
namespace {

[[noreturn]] void fail(const std::string& message) { throw std::invalid_argument(message); }

// Fixed 8-lane partial sums: vectorizable without reassociation flags and
// independent of thread count.
float dot(const float* a, const float* b, std::int64_t n) {
  float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) lanes[j] += a[i + j] * b[i + j];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

struct ConvGeometry {
  std::int64_t batch, in_ch, out_ch;
  std::int64_t d, h, w;     // input
  std::int64_t od, oh, ow;  // output
  std::int64_t kd, kh, kw;
  Padding pad;
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, Padding pad) {
  if (input.channels() != kernel.dims[1]) {
    fail("conv3d: input " + input.to_string() + " has " + std::to_string(input.channels()) +
         " channels but kernel " + kernel.to_string() + " expects " +
         std::to_string(kernel.dims[1]));
  }
  ConvGeometry g{};
  g.batch = input.batch();
  g.in_ch = input.channels();
  g.out_ch = kernel.dims[0];
  g.d = input.depth();
  g.h = input.height();
  g.w = input.width();
  g.kd = kernel.dims[2];
  g.kh = kernel.dims[3];
  g.kw = kernel.dims[4];
  g.pad = pad;
  g.od = g.d + 2 * pad.depth - g.kd + 1;
  g.oh = g.h + 2 * pad.height - g.kh + 1;
  g.ow = g.w + 2 * pad.width - g.kw + 1;
  const bool empty_input = input.spatial() == 0;
  if (empty_input) {
    g.od = std::max<std::int64_t>(g.od, 0);
    g.oh = std::max<std::int64_t>(g.oh, 0);
    g.ow = std::max<std::int64_t>(g.ow, 0);
    if (g.d == 0) g.od = 0;
    if (g.h == 0) g.oh = 0;
    if (g.w == 0) g.ow = 0;
  }
  if (g.od < 0 || g.oh < 0 || g.ow < 0) {
    fail("conv3d: kernel " + kernel.to_string() + " larger than padded input " +
         input.to_string());
  }
  return g;
}

// Valid output range along one axis for kernel tap k.
struct Range {
  std::int64_t lo, hi;
};
Range tap_range(std::int64_t in_extent, std::int64_t out_extent, std::int64_t pad,
                std::int64_t tap) {
  return {std::max<std::int64_t>(0, pad - tap),
          std::min<std::int64_t>(out_extent, in_extent + pad - tap)};
}

}  // namespace

Padding same_padding(const Shape& kernel_shape) {
  for (int axis = 2; axis < 5; ++axis) {
    if (kernel_shape.dims[axis] % 2 == 0) {
      fail("same padding requires odd kernel extents, got kernel " + kernel_shape.to_string());
    }
  }
  return {(kernel_shape.dims[2] - 1) / 2, (kernel_shape.dims[3] - 1) / 2,
          (kernel_shape.dims[4] - 1) / 2};
}

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, Padding pad) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), pad);
  if (bias.element_count() != g.out_ch) {
    fail("conv3d: bias " + bias.shape().to_string() + " does not match kernel " +
         weight.shape().to_string());
  }
  Tensor out(Shape(g.batch, g.out_ch, g.od, g.oh, g.ow));
  const std::int64_t in_plane = g.d * g.h * g.w;
  const std::int64_t out_plane = g.od * g.oh * g.ow;
  const std::int64_t taps = g.kd * g.kh * g.kw;
  const float* x = input.raw();
  const float* wt = weight.raw();
  float* y = out.raw();

  parallel_for(g.batch * g.out_ch, [&](std::int64_t job) {
    const std::int64_t n = job / g.out_ch;
    const std::int64_t oc = job % g.out_ch;
    float* o = y + job * out_plane;
    std::fill(o, o + out_plane, bias[oc]);
    for (std::int64_t ic = 0; ic < g.in_ch; ++ic) {
      const float* in = x + (n * g.in_ch + ic) * in_plane;
      const float* wk = wt + (oc * g.in_ch + ic) * taps;
      for (std::int64_t a = 0; a < g.kd; ++a) {
        const Range rz = tap_range(g.d, g.od, pad.depth, a);
        for (std::int64_t b = 0; b < g.kh; ++b) {
          const Range ry = tap_range(g.h, g.oh, pad.height, b);
          for (std::int64_t c = 0; c < g.kw; ++c) {
            const Range rx = tap_range(g.w, g.ow, pad.width, c);
            const float wv = wk[(a * g.kh + b) * g.kw + c];
            for (std::int64_t oz = rz.lo; oz < rz.hi; ++oz) {
              const float* in_slice = in + (oz + a - pad.depth) * g.h * g.w;
              float* o_slice = o + oz * g.oh * g.ow;
              for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
                const float* __restrict src =
                    in_slice + (oy + b - pad.height) * g.w + (c - pad.width);
                float* __restrict dst = o_slice + oy * g.ow;
                for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox] += wv * src[ox];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight,
                             const Shape& input_shape, Padding pad) {
  const ConvGeometry g = conv_geometry(input_shape, weight.shape(), pad);
  const Shape expected(g.batch, g.out_ch, g.od, g.oh, g.ow);
  if (grad_out.shape() != expected) {
    fail("conv3d backward: gradient " + grad_out.shape().to_string() + " vs expected " +
         expected.to_string());
  }
  Tensor grad_in(input_shape);
  const std::int64_t in_plane = g.d * g.h * g.w;
  const std::int64_t out_plane = g.od * g.oh * g.ow;
  const std::int64_t taps = g.kd * g.kh * g.kw;
  const float* gy = grad_out.raw();
  const float* wt = weight.raw();
  float* gx = grad_in.raw();

  parallel_for(g.batch * g.in_ch, [&](std::int64_t job) {
    const std::int64_t n = job / g.in_ch;
    const std::int64_t ic = job % g.in_ch;
    float* gi = gx + job * in_plane;
    for (std::int64_t oc = 0; oc < g.out_ch; ++oc) {
      const float* go = gy + (n * g.out_ch + oc) * out_plane;
      const float* wk = wt + (oc * g.in_ch + ic) * taps;
      for (std::int64_t a = 0; a < g.kd; ++a) {
        const Range rz = tap_range(g.d, g.od, pad.depth, a);
        for (std::int64_t b = 0; b < g.kh; ++b) {
          const Range ry = tap_range(g.h, g.oh, pad.height, b);
          for (std::int64_t c = 0; c < g.kw; ++c) {
            const Range rx = tap_range(g.w, g.ow, pad.width, c);
            const float wv = wk[(a * g.kh + b) * g.kw + c];
            for (std::int64_t oz = rz.lo; oz < rz.hi; ++oz) {
              float* gi_slice = gi + (oz + a - pad.depth) * g.h * g.w;
              const float* go_slice = go + oz * g.oh * g.ow;
              for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
                float* __restrict dst = gi_slice + (oy + b - pad.height) * g.w + (c - pad.width);
                const float* __restrict src = go_slice + oy * g.ow;
                for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox] += wv * src[ox];
              }
            }
          }
        }
      }
    }
  });
  return grad_in;
}

void conv3d_accumulate_param_grads(const Tensor& input, const Tensor& grad_out, Padding pad,
                                   Tensor& grad_weight, Tensor& grad_bias) {
  const ConvGeometry g = conv_geometry(input.shape(), grad_weight.shape(), pad);
  const Shape expected(g.batch, g.out_ch, g.od, g.oh, g.ow);
  if (grad_out.shape() != expected) {
    fail("conv3d backward: gradient " + grad_out.shape().to_string() + " vs expected " +
         expected.to_string());
  }
  const std::int64_t in_plane = g.d * g.h * g.w;
  const std::int64_t out_plane = g.od * g.oh * g.ow;
  const std::int64_t taps = g.kd * g.kh * g.kw;
  const float* gy = grad_out.raw();
  const float* x = input.raw();
  float* gw = grad_weight.raw();

  parallel_for(g.out_ch * g.in_ch, [&](std::int64_t job) {
    const std::int64_t oc = job / g.in_ch;
    const std::int64_t ic = job % g.in_ch;
    for (std::int64_t a = 0; a < g.kd; ++a) {
      const Range rz = tap_range(g.d, g.od, pad.depth, a);
      for (std::int64_t b = 0; b < g.kh; ++b) {
        const Range ry = tap_range(g.h, g.oh, pad.height, b);
        for (std::int64_t c = 0; c < g.kw; ++c) {
          const Range rx = tap_range(g.w, g.ow, pad.width, c);
          double acc = 0.0;
          for (std::int64_t n = 0; n < g.batch; ++n) {
            const float* in = x + (n * g.in_ch + ic) * in_plane;
            const float* go = gy + (n * g.out_ch + oc) * out_plane;
            for (std::int64_t oz = rz.lo; oz < rz.hi; ++oz) {
              for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
                const float* src = in + (oz + a - pad.depth) * g.h * g.w +
                                   (oy + b - pad.height) * g.w + (c - pad.width);
                const float* grad = go + oz * g.oh * g.ow + oy * g.ow;
                acc += dot(grad + rx.lo, src + rx.lo, rx.hi - rx.lo);
              }
            }
          }
          gw[job * taps + (a * g.kh + b) * g.kw + c] += static_cast<float>(acc);
        }
      }
    }
  });

  for (std::int64_t oc = 0; oc < g.out_ch; ++oc) {
    double acc = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const float* go = gy + (n * g.out_ch + oc) * out_plane;
      for (std::int64_t i = 0; i < out_plane; ++i) acc += go[i];
    }
    grad_bias[oc] += static_cast<float>(acc);
  }
}

Tensor group_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  std::int64_t group_size, float epsilon, GroupNormStats* stats) {
  const Shape& s = input.shape();
  if (group_size <= 0) fail("group_norm: group size must be positive");
  if (s.channels() % group_size != 0) {
    fail("group_norm: " + std::to_string(s.channels()) +
         " channels not divisible by group size " + std::to_string(group_size));
  }
  if (gamma.element_count() != s.channels() || beta.element_count() != s.channels()) {
    fail("group_norm: affine parameters do not match " + std::to_string(s.channels()) +
         " channels");
  }
  const std::int64_t groups = s.channels() / group_size;
  const std::int64_t group_elems = group_size * s.spatial();
  const std::int64_t plane = s.spatial();
  Tensor out(s);
  GroupNormStats local;
  GroupNormStats& st = stats ? *stats : local;
  st.mean.assign(static_cast<std::size_t>(s.batch() * groups), 0.0);
  st.inv_std.assign(static_cast<std::size_t>(s.batch() * groups), 0.0);

  parallel_for(s.batch() * groups, [&](std::int64_t job) {
    const std::int64_t n = job / groups;
    const std::int64_t grp = job % groups;
    const float* x = input.raw() + (n * s.channels() + grp * group_size) * plane;
    float* y = out.raw() + (n * s.channels() + grp * group_size) * plane;
    double mean = 0.0;
    for (std::int64_t i = 0; i < group_elems; ++i) mean += x[i];
    mean = group_elems > 0 ? mean / static_cast<double>(group_elems) : 0.0;
    double var = 0.0;
    for (std::int64_t i = 0; i < group_elems; ++i) {
      const double d = x[i] - mean;
      var += d * d;
    }
    var = group_elems > 0 ? var / static_cast<double>(group_elems) : 0.0;
    const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(epsilon));
    st.mean[static_cast<std::size_t>(job)] = mean;
    st.inv_std[static_cast<std::size_t>(job)] = inv_std;
    for (std::int64_t cl = 0; cl < group_size; ++cl) {
      const std::int64_t c = grp * group_size + cl;
      const double scale = inv_std * gamma[c];
      const double shift = beta[c] - mean * scale;
      const float* xc = x + cl * plane;
      float* yc = y + cl * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        yc[i] = static_cast<float>(xc[i] * scale + shift);
      }
    }
  });
  return out;
}

Tensor group_norm_backward(const Tensor& input, const Tensor& gamma, std::int64_t group_size,
                           const GroupNormStats& stats, const Tensor& grad_out,
                           Tensor& grad_gamma, Tensor& grad_beta) {
  const Shape& s = input.shape();
  if (grad_out.shape() != s) {
    fail("group_norm backward: gradient " + grad_out.shape().to_string() + " vs input " +
         s.to_string());
  }
  const std::int64_t groups = s.channels() / group_size;
  const std::int64_t plane = s.spatial();
  const double count = static_cast<double>(group_size * plane);
  Tensor grad_in(s);

  // Per-channel reductions first (sum over batch in fixed order).
  for (std::int64_t c = 0; c < s.channels(); ++c) {
    const std::int64_t grp = c / group_size;
    double dgamma = 0.0;
    double dbeta = 0.0;
    for (std::int64_t n = 0; n < s.batch(); ++n) {
      const auto k = static_cast<std::size_t>(n * groups + grp);
      const double mean = stats.mean[k];
      const double inv_std = stats.inv_std[k];
      const float* x = input.raw() + (n * s.channels() + c) * plane;
      const float* gy = grad_out.raw() + (n * s.channels() + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        dgamma += gy[i] * ((x[i] - mean) * inv_std);
        dbeta += gy[i];
      }
    }
    grad_gamma[c] += static_cast<float>(dgamma);
    grad_beta[c] += static_cast<float>(dbeta);
  }

  parallel_for(s.batch() * groups, [&](std::int64_t job) {
    const std::int64_t n = job / groups;
    const std::int64_t grp = job % groups;
    const double mean = stats.mean[static_cast<std::size_t>(job)];
    const double inv_std = stats.inv_std[static_cast<std::size_t>(job)];
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::int64_t cl = 0; cl < group_size; ++cl) {
      const std::int64_t c = grp * group_size + cl;
      const float* x = input.raw() + (n * s.channels() + c) * plane;
      const float* gy = grad_out.raw() + (n * s.channels() + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double dxhat = static_cast<double>(gy[i]) * gamma[c];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * ((x[i] - mean) * inv_std);
      }
    }
    const double mean_dxhat = count > 0 ? sum_dxhat / count : 0.0;
    const double mean_dxhat_xhat = count > 0 ? sum_dxhat_xhat / count : 0.0;
    for (std::int64_t cl = 0; cl < group_size; ++cl) {
      const std::int64_t c = grp * group_size + cl;
      const float* x = input.raw() + (n * s.channels() + c) * plane;
      const float* gy = grad_out.raw() + (n * s.channels() + c) * plane;
      float* gx = grad_in.raw() + (n * s.channels() + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xhat = (x[i] - mean) * inv_std;
        const double dxhat = static_cast<double>(gy[i]) * gamma[c];
        gx[i] = static_cast<float>(inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat));
      }
    }
  });
  return grad_in;
}

Tensor leaky_relu(const Tensor& input, float slope) {
  Tensor out(input.shape());
  const float* x = input.raw();
  float* y = out.raw();
  for (std::int64_t i = 0; i < input.element_count(); ++i) {
    y[i] = x[i] >= 0.0f ? x[i] : slope * x[i];
  }
  return out;
}

Tensor leaky_relu_backward(const Tensor& input, const Tensor& grad_out, float slope) {
  if (input.shape() != grad_out.shape()) {
    fail("leaky_relu backward: gradient " + grad_out.shape().to_string() + " vs input " +
         input.shape().to_string());
  }
  Tensor grad_in(input.shape());
  const float* x = input.raw();
  const float* gy = grad_out.raw();
  float* gx = grad_in.raw();
  for (std::int64_t i = 0; i < input.element_count(); ++i) {
    gx[i] = x[i] >= 0.0f ? gy[i] : slope * gy[i];
  }
  return grad_in;
}

void leaky_relu_inplace(Tensor& values, float slope) {
  float* x = values.raw();
  for (std::int64_t i = 0; i < values.element_count(); ++i) {
    if (x[i] < 0.0f) x[i] *= slope;
  }
}

void leaky_relu_backward_inplace(const Tensor& activation, Tensor& grad, float slope) {
  if (activation.shape() != grad.shape()) {
    fail("leaky_relu backward: gradient " + grad.shape().to_string() + " vs activation " +
         activation.shape().to_string());
  }
  const float* a = activation.raw();
  float* g = grad.raw();
  for (std::int64_t i = 0; i < grad.element_count(); ++i) {
    if (a[i] < 0.0f) g[i] *= slope;
  }
}

namespace {

void check_poolable(const Shape& s) {
  if (s.depth() % 2 != 0 || s.height() % 2 != 0 || s.width() % 2 != 0) {
    fail("max_pool2: spatial extents of " + s.to_string() + " must all be even");
  }
}

}  // namespace

Tensor max_pool2(const Tensor& input) {
  const Shape& s = input.shape();
  check_poolable(s);
  const Shape os(s.batch(), s.channels(), s.depth() / 2, s.height() / 2, s.width() / 2);
  Tensor out(os);
  parallel_for(s.batch() * s.channels(), [&](std::int64_t job) {
    const float* x = input.raw() + job * s.spatial();
    float* y = out.raw() + job * os.spatial();
    for (std::int64_t z = 0; z < os.depth(); ++z) {
      for (std::int64_t yy = 0; yy < os.height(); ++yy) {
        for (std::int64_t xx = 0; xx < os.width(); ++xx) {
          float best = x[((2 * z) * s.height() + 2 * yy) * s.width() + 2 * xx];
          for (int dz = 0; dz < 2; ++dz) {
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const float v =
                    x[((2 * z + dz) * s.height() + 2 * yy + dy) * s.width() + 2 * xx + dx];
                if (v > best) best = v;
              }
            }
          }
          y[(z * os.height() + yy) * os.width() + xx] = best;
        }
      }
    }
  });
  return out;
}

Tensor max_pool2_backward(const Tensor& input, const Tensor& grad_out) {
  const Shape& s = input.shape();
  check_poolable(s);
  const Shape os(s.batch(), s.channels(), s.depth() / 2, s.height() / 2, s.width() / 2);
  if (grad_out.shape() != os) {
    fail("max_pool2 backward: gradient " + grad_out.shape().to_string() + " vs expected " +
         os.to_string());
  }
  Tensor grad_in(s);
  parallel_for(s.batch() * s.channels(), [&](std::int64_t job) {
    const float* x = input.raw() + job * s.spatial();
    const float* gy = grad_out.raw() + job * os.spatial();
    float* gx = grad_in.raw() + job * s.spatial();
    for (std::int64_t z = 0; z < os.depth(); ++z) {
      for (std::int64_t yy = 0; yy < os.height(); ++yy) {
        for (std::int64_t xx = 0; xx < os.width(); ++xx) {
          std::int64_t best_at = ((2 * z) * s.height() + 2 * yy) * s.width() + 2 * xx;
          float best = x[best_at];
          for (int dz = 0; dz < 2; ++dz) {
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const std::int64_t at =
                    ((2 * z + dz) * s.height() + 2 * yy + dy) * s.width() + 2 * xx + dx;
                if (x[at] > best) {
                  best = x[at];
                  best_at = at;
                }
              }
            }
          }
          gx[best_at] += gy[(z * os.height() + yy) * os.width() + xx];
        }
      }
    }
  });
  return grad_in;
}

namespace {

// Source taps for output index j of a x2 half-pixel linear resample.
struct LinearTap {
  std::int64_t lo, hi;
  float w_lo, w_hi;
};

LinearTap upsample_tap(std::int64_t j, std::int64_t extent) {
  double src = (static_cast<double>(j) + 0.5) / 2.0 - 0.5;
  if (src < 0.0) src = 0.0;
  const auto lo = static_cast<std::int64_t>(std::floor(src));
  const std::int64_t hi = std::min(lo + 1, extent - 1);
  const double frac = src - static_cast<double>(lo);
  return {lo, hi, static_cast<float>(1.0 - frac), static_cast<float>(frac)};
}

// Views the tensor as [outer][extent][inner] around one spatial axis.
Tensor upsample_axis(const Tensor& input, int axis) {
  const Shape& s = input.shape();
  Shape os = s;
  os.dims[static_cast<std::size_t>(axis)] *= 2;
  Tensor out(os);
  std::int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s.dims[static_cast<std::size_t>(i)];
  std::int64_t inner = 1;
  for (int i = axis + 1; i < 5; ++i) inner *= s.dims[static_cast<std::size_t>(i)];
  const std::int64_t extent = s.dims[static_cast<std::size_t>(axis)];
  const std::int64_t out_extent = 2 * extent;
  parallel_for(outer, [&](std::int64_t o) {
    const float* x = input.raw() + o * extent * inner;
    float* y = out.raw() + o * out_extent * inner;
    for (std::int64_t j = 0; j < out_extent; ++j) {
      const LinearTap t = upsample_tap(j, extent);
      const float* a = x + t.lo * inner;
      const float* b = x + t.hi * inner;
      float* dst = y + j * inner;
      for (std::int64_t k = 0; k < inner; ++k) dst[k] = t.w_lo * a[k] + t.w_hi * b[k];
    }
  });
  return out;
}

Tensor upsample_axis_backward(const Tensor& grad_out, int axis) {
  const Shape& os = grad_out.shape();
  Shape s = os;
  s.dims[static_cast<std::size_t>(axis)] /= 2;
  Tensor grad_in(s);
  std::int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s.dims[static_cast<std::size_t>(i)];
  std::int64_t inner = 1;
  for (int i = axis + 1; i < 5; ++i) inner *= s.dims[static_cast<std::size_t>(i)];
  const std::int64_t extent = s.dims[static_cast<std::size_t>(axis)];
  const std::int64_t out_extent = 2 * extent;
  parallel_for(outer, [&](std::int64_t o) {
    const float* gy = grad_out.raw() + o * out_extent * inner;
    float* gx = grad_in.raw() + o * extent * inner;
    for (std::int64_t j = 0; j < out_extent; ++j) {
      const LinearTap t = upsample_tap(j, extent);
      const float* src = gy + j * inner;
      float* a = gx + t.lo * inner;
      float* b = gx + t.hi * inner;
      for (std::int64_t k = 0; k < inner; ++k) {
        a[k] += t.w_lo * src[k];
        b[k] += t.w_hi * src[k];
      }
    }
  });
  return grad_in;
}

}  // namespace

Tensor upsample2(const Tensor& input) {
  Tensor t = upsample_axis(input, 2);
  t = upsample_axis(t, 3);
  return upsample_axis(t, 4);
}

Tensor upsample2_backward(const Tensor& grad_out) {
  const Shape& s = grad_out.shape();
  if (s.depth() % 2 != 0 || s.height() % 2 != 0 || s.width() % 2 != 0) {
    fail("upsample2 backward: gradient " + s.to_string() + " has odd spatial extent");
  }
  Tensor t = upsample_axis_backward(grad_out, 4);
  t = upsample_axis_backward(t, 3);
  return upsample_axis_backward(t, 2);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.batch() != sb.batch() || sa.depth() != sb.depth() || sa.height() != sb.height() ||
      sa.width() != sb.width()) {
    fail("concat_channels: extents differ between " + sa.to_string() + " and " + sb.to_string());
  }
  Tensor out(sa.with_channels(sa.channels() + sb.channels()));
  const std::int64_t na = sa.channels() * sa.spatial();
  const std::int64_t nb = sb.channels() * sb.spatial();
  for (std::int64_t n = 0; n < sa.batch(); ++n) {
    float* dst = out.raw() + n * (na + nb);
    std::copy_n(a.raw() + n * na, na, dst);
    std::copy_n(b.raw() + n * nb, nb, dst + na);
  }
  return out;
}

Tensor slice_channels(const Tensor& input, std::int64_t begin, std::int64_t end) {
  const Shape& s = input.shape();
  if (begin < 0 || end > s.channels() || begin > end) {
    fail("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(end) +
         ") outside " + std::to_string(s.channels()) + " channels");
  }
  Tensor out(s.with_channels(end - begin));
  const std::int64_t plane = s.spatial();
  const std::int64_t count = (end - begin) * plane;
  for (std::int64_t n = 0; n < s.batch(); ++n) {
    std::copy_n(input.raw() + (n * s.channels() + begin) * plane, count,
                out.raw() + n * count);
  }
  return out;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out(input.shape());
  const float* x = input.raw();
  float* y = out.raw();
  for (std::int64_t i = 0; i < input.element_count(); ++i) {
    y[i] = 1.0f / (1.0f + std::exp(-x[i]));
  }
  return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out) {
  if (output.shape() != grad_out.shape()) {
    fail("sigmoid backward: gradient " + grad_out.shape().to_string() + " vs output " +
         output.shape().to_string());
  }
  Tensor grad_in(output.shape());
  const float* y = output.raw();
  const float* gy = grad_out.raw();
  float* gx = grad_in.raw();
  for (std::int64_t i = 0; i < output.element_count(); ++i) gx[i] = gy[i] * y[i] * (1.0f - y[i]);
  return grad_in;
}

double sum(const Tensor& input) {
  double acc = 0.0;
  for (float v : input.data()) acc += v;
  return acc;
}

}  // namespace revvolnet::kernels
