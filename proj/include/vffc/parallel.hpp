#pragma once

#include <cstdint>
#include <functional>

namespace vffc {

// Number of worker threads used by data-parallel kernels. Defaults to the
// hardware concurrency, capped by the VFFC_THREADS environment variable.
int thread_count();

// Overrides thread_count() for the current process (0 restores the default).
void set_thread_count(int n);

// Runs fn(block_begin, block_end) over [0, n) split into fixed-size blocks.
// Results must not depend on which thread runs a block: kernels either write
// disjoint ranges or reduce per-block partials in block order afterwards, so
// output is bit-identical for any thread count.
void parallel_for(std::int64_t n, std::int64_t block,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace vffc
