#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace tir {

// Worker count resolution order: explicit argument, TIRTARGET_WORKERS env
// var, hardware concurrency.
inline int default_workers() {
  if (const char* env = std::getenv("TIRTARGET_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n). Each index must write only to its own output
// slot; with that discipline parallel and serial runs are bitwise identical.
inline void parallel_for(int n, const std::function<void(int)>& fn, int workers = 0) {
  if (workers <= 0) workers = default_workers();
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto run = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> threads;
  const int spawn = std::min(workers, n);
  threads.reserve(spawn);
  for (int t = 0; t < spawn; ++t) threads.emplace_back(run);
  for (auto& t : threads) t.join();
}

}  // namespace tir
