#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "fccausal/errors.hpp"
#include "fccausal/model_backend.hpp"

namespace fccausal {

// Runs fn(model, i) for i in [0, count) on up to `workers` threads, each
// with its own handle from `factory`. Results must be written by index so
// the outcome does not depend on scheduling. The first exception is
// rethrown after all workers stop.
template <typename Fn>
void parallel_over_models(const ModelFactory& factory, std::size_t count, int workers, Fn&& fn) {
  if (workers < 1) throw ConfigError("worker count must be >= 1");
  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  if (n_threads <= 1) {
    auto model = factory();
    for (std::size_t i = 0; i < count; ++i) fn(*model, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> threads;
    threads.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
      threads.emplace_back([&] {
        try {
          auto model = factory();
          for (std::size_t i = next++; i < count && !failed; i = next++) fn(*model, i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace fccausal
