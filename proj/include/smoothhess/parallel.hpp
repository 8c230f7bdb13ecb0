#pragma once

#include <cstddef>
#include <functional>

namespace smoothhess {

/// Process-wide worker count used by the batch loops. Defaults to the
/// SMOOTHHESS_THREADS environment variable, else 1.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs task(i) for i in [0, n) on up to thread_count() workers. Tasks must
/// write to disjoint outputs; the first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task);

}  // namespace smoothhess
