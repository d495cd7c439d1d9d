#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace ssvg {

// Runs fn(i, worker) for i in [0, n); worker ids are 0..t-1 and the block
// boundaries are a pure function of (n, threads). With threads <= 1 the loop
// runs serially as worker 0. Callers must be order-independent across blocks.
inline void parallel_for_indexed(int n, int threads, const std::function<void(int, int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  const int t = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(t));
  for (int w = 0; w < t; ++w) {
    const int lo = static_cast<int>(static_cast<long long>(n) * w / t);
    const int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / t);
    pool.emplace_back([lo, hi, w, &fn] {
      for (int i = lo; i < hi; ++i) fn(i, w);
    });
  }
  for (auto& th : pool) th.join();
}

inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  parallel_for_indexed(n, threads, [&fn](int i, int) { fn(i); });
}

}  // namespace ssvg
