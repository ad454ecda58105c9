#include "glssl/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <vector>

#include "parallel.hpp"

#define GLSSL_AVX2 __attribute__((target("avx2,fma")))

namespace glssl::kernels {
namespace {

GLSSL_AVX2 inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

GLSSL_AVX2 inline __m256d vabs(__m256d v) { return _mm256_andnot_pd(_mm256_set1_pd(-0.0), v); }

// g * sign(delta) with sign(0) = 0.
GLSSL_AVX2 inline __m256d signed_by(__m256d g, __m256d delta) {
  const __m256d flipped = _mm256_xor_pd(g, _mm256_and_pd(delta, _mm256_set1_pd(-0.0)));
  return _mm256_and_pd(flipped, _mm256_cmp_pd(delta, _mm256_setzero_pd(), _CMP_NEQ_OQ));
}

// crow[0:n] += av * brow[0:n]
GLSSL_AVX2 inline void axpy(double av, const double* brow, double* crow, std::size_t n) {
  const __m256d a4 = _mm256_set1_pd(av);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(a4, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j)));
  }
  for (; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
}

// Register-tiled C[i0:i0+4, :] (+)= A[i0:i0+4, :] * B where B is [k x n] row-major
// with leading dimension n. Every output accumulates over p in ascending order
// with fused multiply-adds, starting from C (accumulate) or zero.
GLSSL_AVX2 void tile4_nn(const double* a, std::size_t lda, const double* b, double* c,
                         std::size_t k, std::size_t n, bool accumulate) {
  const double* a0 = a;
  const double* a1 = a + lda;
  const double* a2 = a + 2 * lda;
  const double* a3 = a + 3 * lda;
  double* c0 = c;
  double* c1 = c + n;
  double* c2 = c + 2 * n;
  double* c3 = c + 3 * n;
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d r00, r01, r10, r11, r20, r21, r30, r31;
    if (accumulate) {
      r00 = _mm256_loadu_pd(c0 + j), r01 = _mm256_loadu_pd(c0 + j + 4);
      r10 = _mm256_loadu_pd(c1 + j), r11 = _mm256_loadu_pd(c1 + j + 4);
      r20 = _mm256_loadu_pd(c2 + j), r21 = _mm256_loadu_pd(c2 + j + 4);
      r30 = _mm256_loadu_pd(c3 + j), r31 = _mm256_loadu_pd(c3 + j + 4);
    } else {
      r00 = r01 = r10 = r11 = r20 = r21 = r30 = r31 = _mm256_setzero_pd();
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
      const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
      __m256d av = _mm256_broadcast_sd(a0 + p);
      r00 = _mm256_fmadd_pd(av, b0, r00), r01 = _mm256_fmadd_pd(av, b1, r01);
      av = _mm256_broadcast_sd(a1 + p);
      r10 = _mm256_fmadd_pd(av, b0, r10), r11 = _mm256_fmadd_pd(av, b1, r11);
      av = _mm256_broadcast_sd(a2 + p);
      r20 = _mm256_fmadd_pd(av, b0, r20), r21 = _mm256_fmadd_pd(av, b1, r21);
      av = _mm256_broadcast_sd(a3 + p);
      r30 = _mm256_fmadd_pd(av, b0, r30), r31 = _mm256_fmadd_pd(av, b1, r31);
    }
    _mm256_storeu_pd(c0 + j, r00), _mm256_storeu_pd(c0 + j + 4, r01);
    _mm256_storeu_pd(c1 + j, r10), _mm256_storeu_pd(c1 + j + 4, r11);
    _mm256_storeu_pd(c2 + j, r20), _mm256_storeu_pd(c2 + j + 4, r21);
    _mm256_storeu_pd(c3 + j, r30), _mm256_storeu_pd(c3 + j + 4, r31);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d r0 = accumulate ? _mm256_loadu_pd(c0 + j) : _mm256_setzero_pd();
    __m256d r1 = accumulate ? _mm256_loadu_pd(c1 + j) : _mm256_setzero_pd();
    __m256d r2 = accumulate ? _mm256_loadu_pd(c2 + j) : _mm256_setzero_pd();
    __m256d r3 = accumulate ? _mm256_loadu_pd(c3 + j) : _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d bv = _mm256_loadu_pd(b + p * n + j);
      r0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + p), bv, r0);
      r1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + p), bv, r1);
      r2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + p), bv, r2);
      r3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + p), bv, r3);
    }
    _mm256_storeu_pd(c0 + j, r0);
    _mm256_storeu_pd(c1 + j, r1);
    _mm256_storeu_pd(c2 + j, r2);
    _mm256_storeu_pd(c3 + j, r3);
  }
  for (; j < n; ++j) {
    double s0 = accumulate ? c0[j] : 0.0, s1 = accumulate ? c1[j] : 0.0;
    double s2 = accumulate ? c2[j] : 0.0, s3 = accumulate ? c3[j] : 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double bv = b[p * n + j];
      s0 = std::fma(a0[p], bv, s0);
      s1 = std::fma(a1[p], bv, s1);
      s2 = std::fma(a2[p], bv, s2);
      s3 = std::fma(a3[p], bv, s3);
    }
    c0[j] = s0, c1[j] = s1, c2[j] = s2, c3[j] = s3;
  }
}

// One row through the zero-skipping path. Bitwise equal to the tiled path:
// fma(0, b, s) == s for finite b.
GLSSL_AVX2 void row_nn_sparse(const double* arow, const double* b, double* crow, std::size_t k,
                              std::size_t n, bool accumulate) {
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
  }
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    if (av == 0.0) continue;
    axpy(av, b + p * n, crow, n);
  }
}

// Path choice only; both paths give identical results. A strided sample of
// at most 64 entries per row keeps the check cheap for dense operands.
bool mostly_zero(const double* a, std::size_t lda, std::size_t rows, std::size_t k) {
  const std::size_t step = std::max<std::size_t>(1, k / 64);
  std::size_t nonzero = 0, seen = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = 0; p < k; p += step, ++seen) nonzero += a[r * lda + p] != 0.0;
  }
  return 2 * nonzero < seen;
}

GLSSL_AVX2 void gemm_nn_rows(const double* a, const double* b, double* c, std::size_t k,
                             std::size_t n, bool accumulate, std::size_t rb, std::size_t re) {
  std::size_t i = rb;
  for (; i + 4 <= re; i += 4) {
    if (mostly_zero(a + i * k, k, 4, k)) {
      for (std::size_t r = 0; r < 4; ++r) row_nn_sparse(a + (i + r) * k, b, c + (i + r) * n, k, n, accumulate);
    } else {
      tile4_nn(a + i * k, k, b, c + i * n, k, n, accumulate);
    }
  }
  for (; i < re; ++i) row_nn_sparse(a + i * k, b, c + i * n, k, n, accumulate);
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  detail::parallel_rows(m, k * n, [=](std::size_t rb, std::size_t re) {
    gemm_nn_rows(a, b, c, k, n, accumulate, rb, re);
  });
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  // With B transposed to [k x n] this is the nn tile, with the sum formed from
  // zero and added to C afterwards as in the reference.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  const double* btp = bt.data();
  detail::parallel_rows(m, k * n, [=](std::size_t rb, std::size_t re) {
    std::vector<double> tmp(4 * n);
    for (std::size_t i = rb; i < re; i += 4) {
      const std::size_t rows = std::min<std::size_t>(4, re - i);
      if (rows == 4) {
        tile4_nn(a + i * k, k, btp, tmp.data(), k, n, false);
      } else {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s = std::fma(a[(i + r) * k + p], btp[p * n + j], s);
            tmp[r * n + j] = s;
          }
        }
      }
      for (std::size_t r = 0; r < rows; ++r) {
        double* crow = c + (i + r) * n;
        const double* t = tmp.data() + r * n;
        if (accumulate) {
          for (std::size_t j = 0; j < n; ++j) crow[j] += t[j];
        } else {
          for (std::size_t j = 0; j < n; ++j) crow[j] = t[j];
        }
      }
    }
  });
}

// C[p0:p0+rows, :] += A[i0:i1, p0:p0+rows]^T * B[i0:i1, :], rows <= 4.
GLSSL_AVX2 void tile_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t n,
                        std::size_t p0, std::size_t rows, std::size_t i0, std::size_t i1) {
  std::size_t j = 0;
  if (rows == 4) {
    for (; j + 8 <= n; j += 8) {
      double* cr = c + p0 * n + j;
      __m256d r00 = _mm256_loadu_pd(cr), r01 = _mm256_loadu_pd(cr + 4);
      __m256d r10 = _mm256_loadu_pd(cr + n), r11 = _mm256_loadu_pd(cr + n + 4);
      __m256d r20 = _mm256_loadu_pd(cr + 2 * n), r21 = _mm256_loadu_pd(cr + 2 * n + 4);
      __m256d r30 = _mm256_loadu_pd(cr + 3 * n), r31 = _mm256_loadu_pd(cr + 3 * n + 4);
      for (std::size_t i = i0; i < i1; ++i) {
        const double* ar = a + i * k + p0;
        const __m256d b0 = _mm256_loadu_pd(b + i * n + j);
        const __m256d b1 = _mm256_loadu_pd(b + i * n + j + 4);
        __m256d av = _mm256_broadcast_sd(ar);
        r00 = _mm256_fmadd_pd(av, b0, r00), r01 = _mm256_fmadd_pd(av, b1, r01);
        av = _mm256_broadcast_sd(ar + 1);
        r10 = _mm256_fmadd_pd(av, b0, r10), r11 = _mm256_fmadd_pd(av, b1, r11);
        av = _mm256_broadcast_sd(ar + 2);
        r20 = _mm256_fmadd_pd(av, b0, r20), r21 = _mm256_fmadd_pd(av, b1, r21);
        av = _mm256_broadcast_sd(ar + 3);
        r30 = _mm256_fmadd_pd(av, b0, r30), r31 = _mm256_fmadd_pd(av, b1, r31);
      }
      _mm256_storeu_pd(cr, r00), _mm256_storeu_pd(cr + 4, r01);
      _mm256_storeu_pd(cr + n, r10), _mm256_storeu_pd(cr + n + 4, r11);
      _mm256_storeu_pd(cr + 2 * n, r20), _mm256_storeu_pd(cr + 2 * n + 4, r21);
      _mm256_storeu_pd(cr + 3 * n, r30), _mm256_storeu_pd(cr + 3 * n + 4, r31);
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* crow = c + (p0 + r) * n;
    std::size_t jj = j;
    for (; jj + 4 <= n; jj += 4) {
      __m256d acc = _mm256_loadu_pd(crow + jj);
      for (std::size_t i = i0; i < i1; ++i) {
        acc = _mm256_fmadd_pd(_mm256_broadcast_sd(a + i * k + p0 + r), _mm256_loadu_pd(b + i * n + jj), acc);
      }
      _mm256_storeu_pd(crow + jj, acc);
    }
    for (; jj < n; ++jj) {
      double s = crow[jj];
      for (std::size_t i = i0; i < i1; ++i) s = std::fma(a[i * k + p0 + r], b[i * n + jj], s);
      crow[jj] = s;
    }
  }
}

GLSSL_AVX2 void gemm_tn_cols(const double* a, const double* b, double* c, std::size_t m,
                             std::size_t k, std::size_t n, bool accumulate, std::size_t kb,
                             std::size_t ke, bool sparse) {
  if (!accumulate) {
    for (std::size_t p = kb; p < ke; ++p)
      for (std::size_t j = 0; j < n; ++j) c[p * n + j] = 0.0;
  }
  if (sparse) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      const double* brow = b + i * n;
      for (std::size_t p = kb; p < ke; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        axpy(av, brow, c + p * n, n);
      }
    }
    return;
  }
  // Blocks of A rows stay cache resident while every column group sweeps them.
  constexpr std::size_t kRowBlock = 256;
  for (std::size_t i0 = 0; i0 < m; i0 += kRowBlock) {
    const std::size_t i1 = std::min(m, i0 + kRowBlock);
    for (std::size_t p = kb; p < ke; p += 4) {
      tile_tn(a, b, c, k, n, p, std::min<std::size_t>(4, ke - p), i0, i1);
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  const bool sparse = mostly_zero(a, k, m, k);
  detail::parallel_rows(k, m * n, [=](std::size_t kb, std::size_t ke) {
    gemm_tn_cols(a, b, c, m, k, n, accumulate, kb, ke, sparse);
  });
}

GLSSL_AVX2 void metric_dense(const double* x, const double* xt, std::size_t n, std::size_t d,
                             const double* alpha, std::size_t ib, std::size_t ie,
                             std::size_t j_begin, double* out) {
  std::size_t i = ib;
  for (; i + 4 <= ie; i += 4) {
    const double* x0 = x + i * d;
    const double* x1 = x0 + d;
    const double* x2 = x1 + d;
    const double* x3 = x2 + d;
    std::size_t j = j_begin;
    for (; j + 8 <= n; j += 8) {
      __m256d r00 = _mm256_setzero_pd(), r01 = r00, r10 = r00, r11 = r00;
      __m256d r20 = r00, r21 = r00, r30 = r00, r31 = r00;
      for (std::size_t q = 0; q < d; ++q) {
        const __m256d v0 = _mm256_loadu_pd(xt + q * n + j);
        const __m256d v1 = _mm256_loadu_pd(xt + q * n + j + 4);
        const __m256d al = _mm256_broadcast_sd(alpha + q);
        __m256d xi = _mm256_broadcast_sd(x0 + q);
        r00 = _mm256_fmadd_pd(al, vabs(_mm256_sub_pd(xi, v0)), r00);
        r01 = _mm256_fmadd_pd(al, vabs(_mm256_sub_pd(xi, v1)), r01);
        xi = _mm256_broadcast_sd(x1 + q);
        r10 = _mm256_fmadd_pd(al, vabs(_mm256_sub_pd(xi, v0)), r10);
        r11 = _mm256_fmadd_pd(al, vabs(_mm256_sub_pd(xi, v1)), r11);
        xi = _mm256_broadcast_sd(x2 + q);
        r20 = _mm256_fmadd_pd(al, vabs(_mm256_sub_pd(xi, v0)), r20);
        r21 = _mm256_fmadd_pd(al, vabs(_mm256_sub_pd(xi, v1)), r21);
        xi = _mm256_broadcast_sd(x3 + q);
        r30 = _mm256_fmadd_pd(al, vabs(_mm256_sub_pd(xi, v0)), r30);
        r31 = _mm256_fmadd_pd(al, vabs(_mm256_sub_pd(xi, v1)), r31);
      }
      double* o = out + i * n + j;
      _mm256_storeu_pd(o, r00), _mm256_storeu_pd(o + 4, r01);
      _mm256_storeu_pd(o + n, r10), _mm256_storeu_pd(o + n + 4, r11);
      _mm256_storeu_pd(o + 2 * n, r20), _mm256_storeu_pd(o + 2 * n + 4, r21);
      _mm256_storeu_pd(o + 3 * n, r30), _mm256_storeu_pd(o + 3 * n + 4, r31);
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        double s = 0.0;
        for (std::size_t q = 0; q < d; ++q) s = std::fma(alpha[q], std::fabs(x0[r * d + q] - xt[q * n + j]), s);
        out[(i + r) * n + j] = s;
      }
    }
  }
  for (; i < ie; ++i) {
    const double* xi = x + i * d;
    std::size_t j = j_begin;
    for (; j + 4 <= n; j += 4) {
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t q = 0; q < d; ++q) {
        const __m256d diff = _mm256_sub_pd(_mm256_broadcast_sd(xi + q), _mm256_loadu_pd(xt + q * n + j));
        acc = _mm256_fmadd_pd(_mm256_broadcast_sd(alpha + q), vabs(diff), acc);
      }
      _mm256_storeu_pd(out + i * n + j, acc);
    }
    for (; j < n; ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < d; ++q) s = std::fma(alpha[q], std::fabs(xi[q] - xt[q * n + j]), s);
      out[i * n + j] = s;
    }
  }
}

GLSSL_AVX2 void metric_pairs(const double* x, std::size_t d, std::size_t i, const double* alpha,
                             const std::uint32_t* js, std::size_t count, double* s) {
  const double* xi = x + i * d;
  for (std::size_t k = 0; k < count; ++k) {
    const double* xj = x + std::size_t{js[k]} * d;
    __m256d acc = _mm256_setzero_pd();
    std::size_t q = 0;
    for (; q + 4 <= d; q += 4) {
      const __m256d delta = _mm256_sub_pd(_mm256_loadu_pd(xi + q), _mm256_loadu_pd(xj + q));
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(alpha + q), vabs(delta), acc);
    }
    double v = hsum(acc);
    for (; q < d; ++q) v = std::fma(alpha[q], std::fabs(xi[q] - xj[q]), v);
    s[k] = v;
  }
}

// Pairs of row i against columns [j0, j1): returns the row sum of t, updates acc
// and the |delta| accumulator.
GLSSL_AVX2 inline double upper_row(const double* col, double* acc, const double* grow, double xi,
                                   std::size_t j0, std::size_t j1, __m256d& ta) {
  const __m256d xv = _mm256_set1_pd(xi);
  __m256d s = _mm256_setzero_pd();
  std::size_t j = j0;
  for (; j + 4 <= j1; j += 4) {
    const __m256d gv = _mm256_loadu_pd(grow + j);
    const __m256d del = _mm256_sub_pd(xv, _mm256_loadu_pd(col + j));
    const __m256d t = signed_by(gv, del);
    s = _mm256_add_pd(s, t);
    _mm256_storeu_pd(acc + j, _mm256_sub_pd(_mm256_loadu_pd(acc + j), t));
    ta = _mm256_fmadd_pd(gv, vabs(del), ta);
  }
  double sdx = hsum(s);
  double tail = 0.0;
  for (; j < j1; ++j) {
    const double del = xi - col[j];
    const double t = del > 0.0 ? grow[j] : (del < 0.0 ? -grow[j] : 0.0);
    sdx += t;
    acc[j] -= t;
    tail = std::fma(grow[j], std::fabs(del), tail);
  }
  ta = _mm256_add_pd(ta, _mm256_set_pd(0.0, 0.0, 0.0, tail));
  return sdx;
}

GLSSL_AVX2 void metric_backward_upper(const double* xt, std::size_t n, std::size_t d, const double* g,
                                      std::size_t ib, std::size_t ie, double* acc_t, double* dalpha) {
  // Column tiles keep the g block of the row range in cache across q.
  constexpr std::size_t kTileJ = 64;
  for (std::size_t jt = ib + 1; jt < n; jt += kTileJ) {
    const std::size_t je = std::min(n, jt + kTileJ);
    for (std::size_t q = 0; q < d; ++q) {
      const double* col = xt + q * n;
      double* acc = acc_t + q * n;
      __m256d ta = _mm256_setzero_pd();
      std::size_t i = ib;
      // Two rows share the column loads and the acc update once both start at jt.
      for (; i + 2 <= ie && i + 2 <= jt; i += 2) {
        const double* ga = g + i * n;
        const double* gb = ga + n;
        const __m256d xa = _mm256_set1_pd(col[i]);
        const __m256d xb = _mm256_set1_pd(col[i + 1]);
        __m256d sa = _mm256_setzero_pd(), sb = sa;
        std::size_t j = jt;
        for (; j + 4 <= je; j += 4) {
          const __m256d v = _mm256_loadu_pd(col + j);
          const __m256d gva = _mm256_loadu_pd(ga + j), gvb = _mm256_loadu_pd(gb + j);
          const __m256d da = _mm256_sub_pd(xa, v), db = _mm256_sub_pd(xb, v);
          const __m256d t0 = signed_by(gva, da), t1 = signed_by(gvb, db);
          sa = _mm256_add_pd(sa, t0);
          sb = _mm256_add_pd(sb, t1);
          _mm256_storeu_pd(acc + j, _mm256_sub_pd(_mm256_loadu_pd(acc + j), _mm256_add_pd(t0, t1)));
          ta = _mm256_fmadd_pd(gva, vabs(da), ta);
          ta = _mm256_fmadd_pd(gvb, vabs(db), ta);
        }
        double sdxa = hsum(sa), sdxb = hsum(sb), tail = 0.0;
        for (; j < je; ++j) {
          const double dela = col[i] - col[j], delb = col[i + 1] - col[j];
          const double t0 = dela > 0.0 ? ga[j] : (dela < 0.0 ? -ga[j] : 0.0);
          const double t1 = delb > 0.0 ? gb[j] : (delb < 0.0 ? -gb[j] : 0.0);
          sdxa += t0;
          sdxb += t1;
          acc[j] -= t0 + t1;
          tail = std::fma(ga[j], std::fabs(dela), tail);
          tail = std::fma(gb[j], std::fabs(delb), tail);
        }
        ta = _mm256_add_pd(ta, _mm256_set_pd(0.0, 0.0, 0.0, tail));
        acc[i] += sdxa;
        acc[i + 1] += sdxb;
      }
      for (; i < ie; ++i) {
        const std::size_t j0 = std::max(jt, i + 1);
        if (j0 >= je) continue;
        acc[i] += upper_row(col, acc, g + i * n, col[i], j0, je, ta);
      }
      dalpha[q] += hsum(ta);
    }
  }
}

GLSSL_AVX2 void metric_backward_pairs(const double* x, std::size_t d, std::size_t i,
                                      const double* alpha, const std::uint32_t* js,
                                      const double* g, std::size_t count, double* dx_i,
                                      double* dalpha_i) {
  const double* xi = x + i * d;
  std::size_t q = 0;
  for (; q + 4 <= d; q += 4) {
    const __m256d xv = _mm256_loadu_pd(xi + q);
    __m256d s = _mm256_setzero_pd(), t = s;
    for (std::size_t k = 0; k < count; ++k) {
      const __m256d gv = _mm256_set1_pd(g[k]);
      const __m256d del = _mm256_sub_pd(xv, _mm256_loadu_pd(x + std::size_t{js[k]} * d + q));
      s = _mm256_add_pd(s, signed_by(gv, del));
      t = _mm256_fmadd_pd(gv, vabs(del), t);
    }
    _mm256_storeu_pd(dx_i + q, _mm256_fmadd_pd(_mm256_loadu_pd(alpha + q), s, _mm256_loadu_pd(dx_i + q)));
    _mm256_storeu_pd(dalpha_i + q, _mm256_add_pd(_mm256_loadu_pd(dalpha_i + q), t));
  }
  for (; q < d; ++q) {
    double sdx = 0.0, sda = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const double del = xi[q] - x[std::size_t{js[k]} * d + q];
      sdx += del > 0.0 ? g[k] : (del < 0.0 ? -g[k] : 0.0);
      sda = std::fma(g[k], std::fabs(del), sda);
    }
    dx_i[q] += alpha[q] * sdx;
    dalpha_i[q] += sda;
  }
}

// exp(max(v, 0)) by range reduction to |r| <= ln2/2 and a degree-13 Taylor
// polynomial; within a few ulp of std::exp. Overflows to +inf like std::exp.
GLSSL_AVX2 inline __m256d exp_relu4(__m256d v) {
  const __m256d x = _mm256_min_pd(_mm256_max_pd(v, _mm256_setzero_pd()), _mm256_set1_pd(710.0));
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(6.93145751953125e-1), x);
  r = _mm256_fnmadd_pd(n, _mm256_set1_pd(1.42860682030941723212e-6), r);
  static constexpr double kInvFact[] = {1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0,
                                        1.0 / 3628800.0,    1.0 / 362880.0,    1.0 / 40320.0,
                                        1.0 / 5040.0,       1.0 / 720.0,       1.0 / 120.0,
                                        1.0 / 24.0,         1.0 / 6.0,         0.5,
                                        1.0,                1.0};
  __m256d p = _mm256_set1_pd(kInvFact[0]);
  for (std::size_t t = 1; t < std::size(kInvFact); ++t) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFact[t]));
  // 2^(n-1) built in the exponent field, then doubled, so n = 1024 still works.
  const __m128i ni = _mm256_cvtpd_epi32(n);
  const __m256i e = _mm256_slli_epi64(_mm256_add_epi64(_mm256_cvtepi32_epi64(ni), _mm256_set1_epi64x(1022)), 52);
  const __m256d scaled = _mm256_mul_pd(p, _mm256_castsi256_pd(e));
  return _mm256_add_pd(scaled, scaled);
}

GLSSL_AVX2 void exp_relu(double* v, std::size_t n) {
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) _mm256_storeu_pd(v + k, exp_relu4(_mm256_loadu_pd(v + k)));
  if (k < n) {
    double tail[4] = {0, 0, 0, 0};
    for (std::size_t t = 0; k + t < n; ++t) tail[t] = v[k + t];
    _mm256_storeu_pd(tail, exp_relu4(_mm256_loadu_pd(tail)));
    for (std::size_t t = 0; k + t < n; ++t) v[k + t] = tail[t];
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  static const KernelTable table{Isa::kAvx2,           "avx2",       gemm_nn,
                                 gemm_nt,              gemm_tn,      metric_dense,
                                 metric_pairs,         metric_backward_upper,
                                 metric_backward_pairs, exp_relu};
  return supported ? &table : nullptr;
}

}  // namespace glssl::kernels

#else

namespace glssl::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace glssl::kernels

#endif
