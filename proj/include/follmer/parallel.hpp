#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace follmer {

/// Worker cap for every parallel loop; 0 means hardware concurrency.
void set_max_threads(int n);
int max_threads();

/// Runs body(begin, end) over contiguous chunks of [0, n). Work items must be
/// independent; any ordered reduction happens afterwards, so results do not depend
/// on the thread count. The first exception thrown by a worker is rethrown.
template <typename F>
void parallel_for(std::size_t n, F&& body, std::size_t min_chunk = 1) {
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(max_threads()), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk)));
  if (workers <= 1 || n < 2) {
    if (n > 0) body(std::size_t{0}, n);
    return;
  }
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&, b, e] {
      try {
        body(b, e);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace follmer
