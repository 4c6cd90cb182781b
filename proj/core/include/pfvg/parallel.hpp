#pragma once

#include <cstddef>
#include <functional>

namespace pfvg {

/// Worker cap from PFVG_THREADS (default 1).
std::size_t thread_budget();

/// Runs fn(i) for i in [0, n) on up to thread_budget() threads. Each index
/// runs exactly once; callers write results by index so output order never
/// depends on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace pfvg
