// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace phantom::detail {

// Worker count, capped by PHANTOM_THREADS when set.
inline std::size_t worker_threads() {
  static const std::size_t count = [] {
    std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("PHANTOM_THREADS")) {
      try {
        long v = std::stol(env);
        if (v >= 1) return std::min<std::size_t>(hw, static_cast<std::size_t>(v));
      } catch (...) {
      }
    }
    return hw;
  }();
  return count;
}

// Splits [0, n) into contiguous chunks. Each index is processed by exactly one
// call, so per-element arithmetic is independent of the thread count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t work_per_item, Fn&& fn) {
  const std::size_t threads = std::min(worker_threads(), n);
  if (threads <= 1 || n * work_per_item < (1u << 17)) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
  for (auto& th : pool) th.join();
}

}  // namespace phantom::detail
