// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "revvolnet/allocation.hpp"

namespace revvolnet {

/// Extents of a 5-axis tensor laid out as (batch, channels, depth, height, width).
struct Shape {
  std::array<std::int64_t, 5> dims{0, 0, 0, 0, 0};

  constexpr Shape() = default;
  constexpr Shape(std::int64_t n, std::int64_t c, std::int64_t d, std::int64_t h,
                  std::int64_t w)
      : dims{n, c, d, h, w} {}

  constexpr std::int64_t batch() const { return dims[0]; }
  constexpr std::int64_t channels() const { return dims[1]; }
  constexpr std::int64_t depth() const { return dims[2]; }
  constexpr std::int64_t height() const { return dims[3]; }
  constexpr std::int64_t width() const { return dims[4]; }
  constexpr std::int64_t spatial() const { return dims[2] * dims[3] * dims[4]; }
  constexpr std::int64_t element_count() const {
    return dims[0] * dims[1] * dims[2] * dims[3] * dims[4];
  }
  constexpr std::int64_t bytes() const { return element_count() * 4; }

  Shape with_channels(std::int64_t c) const { return {dims[0], c, dims[2], dims[3], dims[4]}; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string to_string() const;
};

std::ostream& operator<<(std::ostream& os, const Shape& shape);

/// Dense float32 tensor owning a contiguous row-major buffer. Copies are deep.
class Tensor {
 public:
  using Buffer = std::vector<float, TrackedAllocator<float>>;

  Tensor() = default;
  explicit Tensor(const Shape& shape, float fill = 0.0f);
  Tensor(const Shape& shape, std::span<const float> values);

  static Tensor zeros(const Shape& shape) { return Tensor(shape, 0.0f); }
  static Tensor full(const Shape& shape, float value) { return Tensor(shape, value); }

  const Shape& shape() const { return shape_; }
  std::int64_t element_count() const { return shape_.element_count(); }
  std::int64_t bytes() const { return shape_.bytes(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return {data_.data(), data_.size()}; }
  std::span<const float> data() const { return {data_.data(), data_.size()}; }
  float* raw() { return data_.data(); }
  const float* raw() const { return data_.data(); }

  float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  std::int64_t offset(std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y,
                      std::int64_t x) const {
    return (((n * shape_.channels() + c) * shape_.depth() + z) * shape_.height() + y) *
               shape_.width() +
           x;
  }
  float& at(std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) {
    return data_[static_cast<std::size_t>(offset(n, c, z, y, x))];
  }
  float at(std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y,
           std::int64_t x) const {
    return data_[static_cast<std::size_t>(offset(n, c, z, y, x))];
  }

  void fill(float value);

  /// Releases the buffer; the shape is kept so reconstruction can verify it.
  void release();

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(float scale);

 private:
  Shape shape_;
  Buffer data_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);

/// Largest absolute elementwise difference; shapes must match.
float max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

// Raw tensor record: "RVT1", five little-endian uint32 extents, then
// element_count little-endian float32 values.
inline constexpr std::size_t kTensorHeaderBytes = 24;

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& tensor);
Tensor load_tensor(const std::string& path);

}  // namespace revvolnet
