// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace revvolnet {

AllocationCounter& AllocationCounter::instance() {
  static AllocationCounter counter;
  return counter;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << *this;
  return os.str();
}

std::ostream& operator<<(std::ostream& os, const Shape& shape) {
  os << '(' << shape.dims[0];
  for (std::size_t i = 1; i < shape.dims.size(); ++i) os << "x" << shape.dims[i];
  return os << ')';
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape.dims) {
    if (d < 0) throw std::invalid_argument("negative tensor extent in " + shape.to_string());
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().to_string() +
                                " vs " + b.shape().to_string());
  }
}

}  // namespace

Tensor::Tensor(const Shape& shape, float fill) : shape_(shape) {
  check_shape(shape);
  data_.assign(static_cast<std::size_t>(shape.element_count()), fill);
}

Tensor::Tensor(const Shape& shape, std::span<const float> values) : shape_(shape) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape.element_count()) {
    throw std::invalid_argument("tensor " + shape.to_string() + " needs " +
                                std::to_string(shape.element_count()) + " values, got " +
                                std::to_string(values.size()));
  }
  data_.assign(values.begin(), values.end());
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::release() {
  Buffer empty;
  data_.swap(empty);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same(*this, other, "add");
  const float* src = other.raw();
  float* dst = raw();
  for (std::size_t i = 0; i < data_.size(); ++i) dst[i] += src[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same(*this, other, "subtract");
  const float* src = other.raw();
  float* dst = raw();
  for (std::size_t i = 0; i < data_.size(); ++i) dst[i] -= src[i];
  return *this;
}

Tensor& Tensor::operator*=(float scale) {
  for (auto& v : data_) v *= scale;
  return *this;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out -= b;
  return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same(a, b, "max_abs_diff");
  float worst = 0.0f;
  for (std::int64_t i = 0; i < a.element_count(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.raw(), b.raw(), static_cast<std::size_t>(a.bytes())) == 0;
}

namespace {

constexpr char kMagic[4] = {'R', 'V', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff),
                         static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw std::runtime_error("truncated tensor record");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
  out.write(kMagic, 4);
  for (auto d : tensor.shape().dims) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw std::invalid_argument("extent too large for tensor record");
    }
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw std::runtime_error("failed writing tensor record");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a tensor record (bad magic)");
  }
  Shape shape;
  for (auto& d : shape.dims) d = get_u32(in);
  Tensor tensor(shape);
  for (auto& v : tensor.data()) v = std::bit_cast<float>(get_u32(in));
  return tensor;
}

void save_tensor(const std::string& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_tensor(out, tensor);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_tensor(in);
}

}  // namespace revvolnet
