#include "agmonlab/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace agmonlab {

namespace {
std::atomic<int> g_threads{0};

int env_threads() {
  if (const char* s = std::getenv("AGMONLAB_THREADS")) {
    const int n = std::atoi(s);
    if (n > 0) return n;
  }
  return 0;
}
}  // namespace

int thread_count() {
  int n = g_threads.load();
  if (n > 0) return n;
  n = env_threads();
  if (n > 0) return n;
  n = int(std::thread::hardware_concurrency());
  return n > 0 ? n : 1;
}

void set_thread_count(int n) { g_threads.store(n > 0 ? n : 0); }

void parallel_for_blocks(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t, int)>& f) {
  const int workers = int(std::max<std::int64_t>(1, std::min<std::int64_t>(thread_count(), n)));
  if (workers == 1 || n < 2) {
    if (n > 0) f(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&f, lo, hi, w] { f(lo, hi, w); });
  }
  for (auto& t : pool) t.join();
}

void parallel_for_blocks(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)>& f) {
  parallel_for_blocks(n, [&f](std::int64_t lo, std::int64_t hi, int) { f(lo, hi); });
}

}  // namespace agmonlab
