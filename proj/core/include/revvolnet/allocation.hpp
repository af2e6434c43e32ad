// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Process-wide accounting of tensor storage. Every Tensor buffer is obtained
// through TrackedAllocator, so live bytes and the high-water mark reflect all
// activations, gradients, transients, parameters and optimizer state.

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <new>

namespace revvolnet {

class AllocationCounter {
 public:
  static AllocationCounter& instance();

  void on_allocate(std::int64_t bytes) noexcept {
    const std::int64_t now = live_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::int64_t peak = peak_.load(std::memory_order_relaxed);
    while (now > peak &&
           !peak_.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
    }
  }
  void on_release(std::int64_t bytes) noexcept {
    live_.fetch_sub(bytes, std::memory_order_relaxed);
  }

  std::int64_t live_bytes() const noexcept { return live_.load(std::memory_order_relaxed); }
  std::int64_t peak_bytes() const noexcept { return peak_.load(std::memory_order_relaxed); }

  /// Restarts high-water tracking from the current live total.
  void reset_peak() noexcept { peak_.store(live_.load(std::memory_order_relaxed)); }

 private:
  std::atomic<std::int64_t> live_{0};
  std::atomic<std::int64_t> peak_{0};
};

template <typename T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <typename U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    auto* p = static_cast<T*>(::operator new(n * sizeof(T)));
    AllocationCounter::instance().on_allocate(static_cast<std::int64_t>(n * sizeof(T)));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    AllocationCounter::instance().on_release(static_cast<std::int64_t>(n * sizeof(T)));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const TrackedAllocator<U>&) const noexcept { return true; }
};

}  // namespace revvolnet
