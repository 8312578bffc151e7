// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace taskmerge {

/// Worker count from TASKVEC_THREADS (0 or unset = hardware concurrency).
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Iterations are distributed across workers in
/// contiguous blocks; fn must only touch state owned by index i.
/// The first exception thrown by any iteration is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace taskmerge
