#pragma once

#include <cstddef>
#include <functional>

namespace ucrf {

/// Number of hardware threads, at least 1.
int default_jobs();

/// Calls fn(i) for i in [0, n) on up to `jobs` threads. Each index must only
/// write its own results; the first exception thrown is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace ucrf
