#pragma once

// Inner-loop kernels behind the autodiff primitives.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant. The variant is chosen once per process from CPUID; set
// GLSSL_SIMD=scalar to force the reference path. Both variants use the same
// loop order over the reduced index, so results agree to rounding, and each is
// bitwise deterministic on its own regardless of thread count.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace glssl::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  std::string_view name;

  // C[m x n] (+)= A[m x k] * B[k x n]. Zero entries of a sparse A are skipped.
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n, bool accumulate);
  // C[m x n] (+)= A[m x k] * B[n x k]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n, bool accumulate);
  // C[k x n] (+)= A[m x k]^T * B[m x n]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n, bool accumulate);

  // Metric over a dense block. xt is x transposed ([d x n]). For rows i in
  // [ib, ie) and columns j in [j_begin, n):
  //   out[i*n + j] = sum_q alpha[q] * |x[i,q] - x[j,q]|
  void (*metric_dense)(const double* x, const double* xt, std::size_t n, std::size_t d,
                       const double* alpha, std::size_t ib, std::size_t ie, std::size_t j_begin,
                       double* out);
  // Same sum for the listed pairs (i, js[k]), into s[k].
  void (*metric_pairs)(const double* x, std::size_t d, std::size_t i, const double* alpha,
                       const std::uint32_t* js, std::size_t count, double* s);

  // Backward of the metric over the unordered pairs (i, j), i in [ib, ie) and
  // j > i, given the symmetrized upstream gradient g ([n x n], only entries
  // above the diagonal are read, g(i,j) = dL/ds(i,j) + dL/ds(j,i)). With
  // t = g(i,j) * sign(x[i,q] - x[j,q]), sign(0) = 0:
  //   acc_t[q*n + i] += t,  acc_t[q*n + j] -= t,  dalpha[q] += g(i,j) * |x[i,q] - x[j,q]|
  // so alpha[q] * acc_t[q*n + i], summed over all row ranges, is dL/dx[i,q].
  void (*metric_backward_upper)(const double* xt, std::size_t n, std::size_t d, const double* g,
                                std::size_t ib, std::size_t ie, double* acc_t, double* dalpha);
  // Same for the listed pairs of row i, with g[k] belonging to js[k].
  void (*metric_backward_pairs)(const double* x, std::size_t d, std::size_t i, const double* alpha,
                                const std::uint32_t* js, const double* g, std::size_t count,
                                double* dx_i, double* dalpha_i);

  // v[k] = exp(max(v[k], 0))
  void (*exp_relu)(double* v, std::size_t n);
};

const KernelTable& scalar_table();
// Null when the build or the CPU does not support AVX2+FMA.
const KernelTable* avx2_table();

// Table in use by the library. Resolved on first call.
const KernelTable& active();

// Overrides the active table (tests and benchmarks). Not thread-safe.
void set_active(const KernelTable& table);

// Worker count for row-parallel kernels: GLSSL_THREADS if set, otherwise the
// hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

}  // namespace glssl::kernels
