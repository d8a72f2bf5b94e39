#pragma once

// Static-partition parallel loop. Each index writes only its own output slot,
// so results do not depend on the thread count.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace singhyp {

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, threads);
  if (threads == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::exception_ptr first_error;
  std::size_t first_index = n;
  std::mutex m;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      // Interleaved partition keeps the load balanced along orbits.
      for (std::size_t i = w; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(m);
          // Report the error of the lowest index, as the serial loop would.
          if (i < first_index) {
            first_index = i;
            first_error = std::current_exception();
          }
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace singhyp
