#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace spinesim {

// requested > 0 wins; otherwise SPINESIM_WORKERS; otherwise hardware concurrency.
unsigned resolve_workers(int requested);

// Runs f(i) for i in [0, n). Work is handed out in fixed-size index chunks; callers
// write results by index so the outcome never depends on the worker count.
template <class F>
void parallel_for(std::size_t n, unsigned workers, F&& f, std::size_t chunk = 64) {
  if (n == 0) return;
  workers = std::max(1u, workers);
  if (workers == 1 || n <= chunk) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto body = [&] {
    try {
      for (;;) {
        const std::size_t lo = next.fetch_add(chunk);
        if (lo >= n) break;
        const std::size_t hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) f(i);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lk(err_mu);
      if (!err) err = std::current_exception();
      next.store(n);
    }
  };
  const unsigned nthreads = static_cast<unsigned>(std::min<std::size_t>(workers, (n + chunk - 1) / chunk));
  std::vector<std::thread> pool;
  pool.reserve(nthreads - 1);
  for (unsigned w = 1; w < nthreads; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

template <class T, class F>
std::vector<T> parallel_map(std::size_t n, unsigned workers, F&& f, std::size_t chunk = 64) {
  std::vector<T> out(n);
  parallel_for(n, workers, [&](std::size_t i) { out[i] = f(i); }, chunk);
  return out;
}

}  // namespace spinesim
