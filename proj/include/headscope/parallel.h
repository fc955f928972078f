#pragma once

#include <cstddef>
#include <exception>
#include <functional>

namespace headscope {

// Runs fn(i) for i in [0, count) on up to `workers` threads. Each index is
// handled exactly once; callers write results into per-index slots so the
// output never depends on scheduling. The first exception thrown by any
// task (lowest index wins) is rethrown after all threads join.
void parallel_for(std::size_t count, int workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace headscope
