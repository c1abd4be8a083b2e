#include "cost/parallel.hpp"

#include <cstdlib>
#include <thread>
#include <vector>

namespace cost {

int worker_count() {
  if (const char* env = std::getenv("COST_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const std::int64_t workers = std::min<std::int64_t>(worker_count(), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers - 1));
  for (std::int64_t t = 1; t < workers; ++t) {
    std::int64_t begin = t * chunk;
    std::int64_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back(fn, begin, end);
  }
  fn(0, std::min(n, chunk));
  for (auto& th : threads) th.join();
}

}  // namespace cost
