#pragma once

#include <cstddef>
#include <functional>

namespace msamseg {

// Worker cap read from MSAMSEG_THREADS (unset or 0 = hardware concurrency).
std::size_t thread_count();

// Runs body(i) for i in [0, n). Iterations must write disjoint memory; any
// reduction over i is the caller's job and must happen in index order so the
// result does not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace msamseg
