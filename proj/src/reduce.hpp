#pragma once

#include <cstddef>

namespace glssl::detail {

// sum of f(k) over [0, n) in four interleaved partial sums, combined as
// (s0 + s1) + (s2 + s3). The order is fixed, so results are reproducible, and
// long reductions are not serialized on one add chain.
template <typename F>
inline double sum4(std::size_t n, F&& f) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += f(k);
    s1 += f(k + 1);
    s2 += f(k + 2);
    s3 += f(k + 3);
  }
  for (; k < n; ++k) s0 += f(k);
  return (s0 + s1) + (s2 + s3);
}

}  // namespace glssl::detail
