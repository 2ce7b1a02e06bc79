#pragma once

#include <cstdint>
#include <functional>

namespace agmonlab {

/// Process-wide worker count: --threads beats AGMONLAB_THREADS beats
/// hardware_concurrency. Thread count never changes results, only wall time.
int thread_count();
void set_thread_count(int n);

/// Static block partition of [0, n); f(begin, end) runs on each worker.
void parallel_for_blocks(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& f);

/// As above but hands the worker slot index (0..thread_count()-1) to f, for
/// per-thread accumulators.
void parallel_for_blocks(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t, int)>& f);

}  // namespace agmonlab
