#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace vlmc {

// Runs fn(i) for i in [0, count) on at most width threads. Blocking calls
// (HTTP) dominate, so this is a plain thread fan-out rather than an OpenMP
// region. The first exception thrown by fn is rethrown after all workers
// finish; the remaining indices still run.
template <typename Fn>
void parallel_for(std::size_t count, int width, Fn&& fn) {
  if (count == 0) return;
  const auto workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(width, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace vlmc
