#pragma once

#include <cstddef>
#include <functional>

namespace mizero {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// processed exactly once; callers write results into per-index slots so
/// the outcome is independent of scheduling. threads == 0 means the
/// hardware concurrency.
void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)>& fn);

unsigned default_thread_count();

}  // namespace mizero
