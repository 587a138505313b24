#pragma once

#include <cstddef>
#include <functional>

namespace ive {

/// Worker count for fan-out work: hardware concurrency, capped by the
/// IVE_THREADS environment variable when it holds a positive integer.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) on up to `workers` threads. Each index runs
/// exactly once; callers write results into pre-sized, index-addressed storage
/// so the outcome does not depend on scheduling. The first exception thrown by
/// any body is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t workers = worker_count());

}  // namespace ive
