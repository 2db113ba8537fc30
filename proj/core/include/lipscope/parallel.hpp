#pragma once

#include <cstddef>
#include <functional>

namespace lipscope {

/// Worker count: LIPSCOPE_THREADS if set to a positive integer, otherwise the
/// number of logical cores.
std::size_t worker_count();

/// Runs fn(0) ... fn(n - 1) on up to worker_count() threads. Callers write
/// results into per-index slots, so the outcome does not depend on scheduling.
/// The first exception thrown by any task is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lipscope
