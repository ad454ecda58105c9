#include <cmath>
#include <vector>

#include "glssl/kernels.hpp"
#include "parallel.hpp"

namespace glssl::kernels {
namespace {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  detail::parallel_rows(m, k * n, [=](std::size_t rb, std::size_t re) {
    for (std::size_t i = rb; i < re; ++i) {
      double* crow = c + i * n;
      if (!accumulate) {
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
      }
      const double* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  detail::parallel_rows(m, k * n, [=](std::size_t rb, std::size_t re) {
    for (std::size_t i = rb; i < re; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        crow[j] = accumulate ? crow[j] + s : s;
      }
    }
  });
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  detail::parallel_rows(k, m * n, [=](std::size_t kb, std::size_t ke) {
    if (!accumulate) {
      for (std::size_t p = kb; p < ke; ++p)
        for (std::size_t j = 0; j < n; ++j) c[p * n + j] = 0.0;
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      const double* brow = b + i * n;
      for (std::size_t p = kb; p < ke; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        double* crow = c + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

void metric_dense(const double* x, const double* xt, std::size_t n, std::size_t d,
                  const double* alpha, std::size_t ib, std::size_t ie, std::size_t j_begin,
                  double* out) {
  for (std::size_t i = ib; i < ie; ++i) {
    const double* xi = x + i * d;
    double* orow = out + i * n;
    for (std::size_t j = j_begin; j < n; ++j) orow[j] = 0.0;
    for (std::size_t q = 0; q < d; ++q) {
      const double* col = xt + q * n;
      for (std::size_t j = j_begin; j < n; ++j) orow[j] += alpha[q] * std::fabs(xi[q] - col[j]);
    }
  }
}

void metric_pairs(const double* x, std::size_t d, std::size_t i, const double* alpha,
                  const std::uint32_t* js, std::size_t count, double* s) {
  const double* xi = x + i * d;
  for (std::size_t k = 0; k < count; ++k) {
    const double* xj = x + std::size_t{js[k]} * d;
    double acc = 0.0;
    for (std::size_t q = 0; q < d; ++q) acc += alpha[q] * std::fabs(xi[q] - xj[q]);
    s[k] = acc;
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void metric_backward_upper(const double* xt, std::size_t n, std::size_t d, const double* g,
                           std::size_t ib, std::size_t ie, double* acc_t, double* dalpha) {
  for (std::size_t q = 0; q < d; ++q) {
    const double* col = xt + q * n;
    double* acc = acc_t + q * n;
    double sda = 0.0;
    for (std::size_t i = ib; i < ie; ++i) {
      const double* grow = g + i * n;
      double sdx = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double delta = col[i] - col[j];
        const double t = grow[j] * sign(delta);
        sdx += t;
        acc[j] -= t;
        sda += grow[j] * std::fabs(delta);
      }
      acc[i] += sdx;
    }
    dalpha[q] += sda;
  }
}

void metric_backward_pairs(const double* x, std::size_t d, std::size_t i, const double* alpha,
                           const std::uint32_t* js, const double* g, std::size_t count,
                           double* dx_i, double* dalpha_i) {
  const double* xi = x + i * d;
  for (std::size_t q = 0; q < d; ++q) {
    double sdx = 0.0, sda = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const double delta = xi[q] - x[std::size_t{js[k]} * d + q];
      sdx += g[k] * sign(delta);
      sda += g[k] * std::fabs(delta);
    }
    dx_i[q] += alpha[q] * sdx;
    dalpha_i[q] += sda;
  }
}

void exp_relu(double* v, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) v[k] = std::exp(v[k] > 0.0 ? v[k] : 0.0);
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::kScalar,         "scalar",     gemm_nn,
                                 gemm_nt,              gemm_tn,      metric_dense,
                                 metric_pairs,         metric_backward_upper,
                                 metric_backward_pairs, exp_relu};
  return table;
}

}  // namespace glssl::kernels
