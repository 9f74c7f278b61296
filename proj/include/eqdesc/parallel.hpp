#pragma once

#include <cstddef>
#include <functional>

namespace eqd {

// Worker count: EQDESC_THREADS if set (>= 1), else the hardware concurrency.
int thread_count();

// Runs fn(begin, end) over a partition of [0, n). Partitions never change the
// arithmetic done for an index, so results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 1);

}  // namespace eqd
