// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace revvolnet {

/// Worker cap for kernels. Initialized from REVVOLNET_THREADS; unset means 1.
int num_threads();
void set_num_threads(int threads);

/// Runs body(i) for i in [0, count). Work is split into contiguous chunks and
/// every index is handled by exactly one thread, so kernels that write
/// disjoint outputs per index stay bit-identical for any thread count.
void parallel_for(std::int64_t count, const std::function<void(std::int64_t)>& body);

}  // namespace revvolnet
