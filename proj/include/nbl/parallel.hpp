#pragma once

#include <cstddef>
#include <functional>

namespace nbl {

// NBL_THREADS caps the worker count; 0 or unset means hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Work items are
// claimed dynamically, so fn must write only to slot i of its outputs. The
// first exception thrown by any item is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace nbl
