#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

#include "glssl/kernels.hpp"

namespace glssl::kernels::detail {

// Runs fn(begin, end) over a static partition of [0, n). Each index is handled
// by exactly one worker with the same arithmetic as the serial path, so results
// do not depend on the worker count.
template <typename Fn>
void parallel_rows(std::size_t n, std::size_t work_per_row, Fn&& fn) {
  constexpr std::size_t kMinWork = 1 << 16;
  std::size_t workers = std::min(thread_count(), n);
  if (workers > 1 && n * work_per_row < kMinWork * workers) {
    workers = std::max<std::size_t>(1, n * work_per_row / kMinWork);
  }
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t b = std::min(n, w * chunk);
    const std::size_t e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
}

}  // namespace glssl::kernels::detail
