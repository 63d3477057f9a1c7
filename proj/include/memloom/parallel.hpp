#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <type_traits>
#include <vector>

namespace memloom {

template <class R>
struct ParallelOutcome {
  std::vector<std::optional<R>> results;
  std::exception_ptr first_error;  // error of the lowest failing index
  std::size_t first_error_index = 0;

  void rethrow_if_failed() const {
    if (first_error) std::rethrow_exception(first_error);
  }
};

/// Runs fn(0..n-1) on up to `workers` threads. Results keep index order; a
/// failing index leaves its slot empty and does not stop the others.
template <class F>
auto parallel_try_map(std::size_t n, std::size_t workers, F&& fn) {
  using R = std::invoke_result_t<F&, std::size_t>;
  ParallelOutcome<R> out;
  out.results.resize(n);
  std::mutex mu;
  auto record_error = [&](std::size_t i, std::exception_ptr e) {
    std::lock_guard lock(mu);
    if (!out.first_error || i < out.first_error_index) {
      out.first_error = e;
      out.first_error_index = i;
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        out.results[i].emplace(fn(i));
      } catch (...) {
        record_error(i, std::current_exception());
      }
    }
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          auto r = fn(i);
          std::lock_guard lock(mu);
          out.results[i].emplace(std::move(r));
        } catch (...) {
          record_error(i, std::current_exception());
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  return out;
}

/// Like parallel_try_map but rethrows the first error and unwraps results.
template <class F>
auto parallel_map(std::size_t n, std::size_t workers, F&& fn) {
  auto outcome = parallel_try_map(n, workers, std::forward<F>(fn));
  outcome.rethrow_if_failed();
  using R = std::invoke_result_t<F&, std::size_t>;
  std::vector<R> out;
  out.reserve(n);
  for (auto& r : outcome.results) out.push_back(std::move(*r));
  return out;
}

}  // namespace memloom
