#pragma once

#include <cstddef>
#include <functional>

namespace refi {

// Thread cap: REFI_THREADS env (0 or unset = hardware concurrency), clamped
// to at least 1. set_max_threads overrides the env for the process.
int max_threads();
void set_max_threads(int n);

// Static partition of [begin, end) into contiguous chunks, one per thread.
// The chunk function must only write state owned by its own index range, so
// results are identical for every thread count. Runs inline when the range
// is below min_parallel or only one thread is allowed.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& chunk_fn,
                  std::size_t min_parallel = 256);

}  // namespace refi
