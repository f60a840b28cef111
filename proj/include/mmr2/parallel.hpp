#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mmr2 {

/// Worker count: MMR2_THREADS if set to a positive integer, else the
/// hardware concurrency (at least 1).
unsigned max_threads();

/// Runs body(0..count-1) on up to `threads` workers. The first exception
/// thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body, unsigned threads = max_threads());

}  // namespace mmr2
