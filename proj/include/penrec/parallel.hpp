#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace penrec {

/// 0 means "use hardware concurrency".
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Run fn(i) for i in [0, n). Work is split into contiguous blocks so that
/// any per-thread accumulation can be reduced in block order, keeping results
/// independent of scheduling. Serial when threads <= 1.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int workers = std::min(threads, n);
  int chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    int lo = w * chunk;
    int hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

/// Block partition helper: worker w owns samples [bounds[w], bounds[w+1]).
inline std::vector<int> block_bounds(int n, int workers) {
  int chunk = (n + workers - 1) / workers;
  std::vector<int> bounds;
  for (int lo = 0; lo < n; lo += chunk) bounds.push_back(lo);
  bounds.push_back(n);
  return bounds;
}

}  // namespace penrec
