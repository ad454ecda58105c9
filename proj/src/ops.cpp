#include "glssl/ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "glssl/errors.hpp"
#include "glssl/kernels.hpp"
#include "kernels/parallel.hpp"
#include "reduce.hpp"

namespace glssl::ops {
namespace {

using kernels::detail::parallel_rows;

std::string shapes(const Tensor& a, const Tensor& b) {
  return a.value().shape_string() + " and " + b.value().shape_string();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shapes(a, b));
  }
}

// Runs fn(grad_buffer) only when t takes gradients.
template <typename Fn>
void accumulate(Tensor t, Fn&& fn) {
  if (t.requires_grad()) fn(t.grad_buffer());
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ " + shapes(a, b));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix out(n, m);
  kernels::active().gemm_nn(a.value().data(), b.value().data(), out.data(), n, k, m, false);
  return tape.record(std::move(out), {a, b}, [a, b, n, k, m](const Matrix&, const Matrix& g) {
    const auto& kt = kernels::active();
    accumulate(a, [&](Matrix& da) { kt.gemm_nt(g.data(), b.value().data(), da.data(), n, m, k, true); });
    accumulate(b, [&](Matrix& db) { kt.gemm_tn(a.value().data(), g.data(), db.data(), n, k, m, true); });
  });
}

Tensor transpose(Tape& tape, const Tensor& a) {
  const Matrix& av = a.value();
  Matrix out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  return tape.record(std::move(out), {a}, [a](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) {
      for (std::size_t i = 0; i < da.rows(); ++i)
        for (std::size_t j = 0; j < da.cols(); ++j) da(i, j) += g(j, i);
    });
  });
}

Tensor relu(Tape& tape, const Tensor& a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return tape.record(std::move(out), {a}, [a](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) {
      const Matrix& x = a.value();
      for (std::size_t k = 0; k < x.size(); ++k)
        if (x[k] > 0.0) da[k] += g[k];
    });
  });
}

Tensor exp(Tape& tape, const Tensor& a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = std::exp(v);
  return tape.record(std::move(out), {a}, [a](const Matrix& y, const Matrix& g) {
    accumulate(a, [&](Matrix& da) {
      for (std::size_t k = 0; k < y.size(); ++k) da[k] += g[k] * y[k];
    });
  });
}

Tensor log_clamped(Tape& tape, const Tensor& a, double floor) {
  Matrix out = a.value();
  for (double& v : out.values()) v = std::log(std::max(v, floor));
  return tape.record(std::move(out), {a}, [a, floor](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) {
      const Matrix& x = a.value();
      for (std::size_t k = 0; k < x.size(); ++k)
        if (x[k] > floor) da[k] += g[k] / x[k];
    });
  });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Matrix out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += b.value()[k];
  return tape.record(std::move(out), {a, b}, [a, b](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) { for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k]; });
    accumulate(b, [&](Matrix& db) { for (std::size_t k = 0; k < g.size(); ++k) db[k] += g[k]; });
  });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Matrix out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= b.value()[k];
  return tape.record(std::move(out), {a, b}, [a, b](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) { for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k]; });
    accumulate(b, [&](Matrix& db) { for (std::size_t k = 0; k < g.size(); ++k) db[k] -= g[k]; });
  });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Matrix out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= b.value()[k];
  return tape.record(std::move(out), {a, b}, [a, b](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) {
      for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k] * b.value()[k];
    });
    accumulate(b, [&](Matrix& db) {
      for (std::size_t k = 0; k < g.size(); ++k) db[k] += g[k] * a.value()[k];
    });
  });
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  Matrix out = a.value();
  for (double& v : out.values()) v *= c;
  return tape.record(std::move(out), {a}, [a, c](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) { for (std::size_t k = 0; k < g.size(); ++k) da[k] += c * g[k]; });
  });
}

Tensor scale_by(Tape& tape, const Tensor& a, const Tensor& s, std::size_t index) {
  if (index >= s.value().size()) {
    throw ShapeError("scale_by: index " + std::to_string(index) + " outside " +
                     s.value().shape_string());
  }
  const double c = s.value()[index];
  Matrix out = a.value();
  for (double& v : out.values()) v *= c;
  return tape.record(std::move(out), {a, s}, [a, s, index](const Matrix&, const Matrix& g) {
    const double c = s.value()[index];
    accumulate(a, [&](Matrix& da) { for (std::size_t k = 0; k < g.size(); ++k) da[k] += c * g[k]; });
    accumulate(s, [&](Matrix& ds) {
      double acc = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) acc += g[k] * a.value()[k];
      ds[index] += acc;
    });
  });
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row counts differ " + shapes(a, b));
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
  Matrix out(n, ca + cb);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().row(i).begin(), ca, out.row(i).begin());
    std::copy_n(b.value().row(i).begin(), cb, out.row(i).begin() + ca);
  }
  return tape.record(std::move(out), {a, b}, [a, b, n, ca, cb](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ca; ++j) da(i, j) += g(i, j);
    });
    accumulate(b, [&](Matrix& db) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cb; ++j) db(i, j) += g(i, ca + j);
    });
  });
}

Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::size_t> rows) {
  const std::size_t c = a.cols();
  Matrix out(rows.size(), c);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= a.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[r]) + " outside " +
                       a.value().shape_string());
    }
    std::copy_n(a.value().row(rows[r]).begin(), c, out.row(r).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape.record(std::move(out), {a}, [a, idx = std::move(idx), c](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) {
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < c; ++j) da(idx[r], j) += g(r, j);
    });
  });
}

Tensor sum_all(Tape& tape, const Tensor& a) {
  const Matrix& av = a.value();
  const double s = detail::sum4(av.size(), [&](std::size_t k) { return av[k]; });
  return tape.record(Matrix(1, 1, s), {a}, [a](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) { for (double& v : da.values()) v += g[0]; });
  });
}

Tensor frobenius_sq(Tape& tape, const Tensor& a) {
  const Matrix& av = a.value();
  const double s = detail::sum4(av.size(), [&](std::size_t k) { return av[k] * av[k]; });
  return tape.record(Matrix(1, 1, s), {a}, [a](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) {
      const Matrix& x = a.value();
      for (std::size_t k = 0; k < x.size(); ++k) da[k] += 2.0 * g[0] * x[k];
    });
  });
}

Tensor inner(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("inner", a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const double s = detail::sum4(av.size(), [&](std::size_t k) { return av[k] * bv[k]; });
  return tape.record(Matrix(1, 1, s), {a, b}, [a, b](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) {
      for (std::size_t k = 0; k < da.size(); ++k) da[k] += g[0] * b.value()[k];
    });
    accumulate(b, [&](Matrix& db) {
      for (std::size_t k = 0; k < db.size(); ++k) db[k] += g[0] * a.value()[k];
    });
  });
}

Tensor squared_distance(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("squared_distance", a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const double s = detail::sum4(av.size(), [&](std::size_t k) { return (av[k] - bv[k]) * (av[k] - bv[k]); });
  return tape.record(Matrix(1, 1, s), {a, b}, [a, b](const Matrix&, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const double c = 2.0 * g[0];
    accumulate(a, [&](Matrix& da) {
      for (std::size_t k = 0; k < da.size(); ++k) da[k] += c * (av[k] - bv[k]);
    });
    accumulate(b, [&](Matrix& db) {
      for (std::size_t k = 0; k < db.size(); ++k) db[k] -= c * (av[k] - bv[k]);
    });
  });
}

Tensor row_normalize(Tape& tape, const Tensor& m) {
  const Matrix& mv = m.value();
  const std::size_t n = mv.rows(), c = mv.cols();
  Matrix out(n, c);
  std::vector<double> sums(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = mv.row(i).data();
    const double s = detail::sum4(c, [&](std::size_t j) { return r[j]; });
    if (!(s > 0.0) || !std::isfinite(s)) throw DegenerateError("row_normalize: zero-sum row", i);
    sums[i] = s;
    for (std::size_t j = 0; j < c; ++j) out(i, j) = mv(i, j) / s;
  }
  return tape.record(std::move(out), {m}, [m, sums = std::move(sums)](const Matrix& y, const Matrix& g) {
    accumulate(m, [&](Matrix& dm) {
      for (std::size_t i = 0; i < y.rows(); ++i) {
        const double dot = detail::sum4(y.cols(), [&](std::size_t j) { return g(i, j) * y(i, j); });
        for (std::size_t j = 0; j < y.cols(); ++j) dm(i, j) += (g(i, j) - dot) / sums[i];
      }
    });
  });
}

Tensor row_softmax(Tape& tape, const Tensor& m) {
  const Matrix& mv = m.value();
  Matrix out(mv.rows(), mv.cols());
  for (std::size_t i = 0; i < mv.rows(); ++i) {
    const auto row = mv.row(i);
    if (row.empty()) continue;
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      out(i, j) = std::exp(row[j] - mx);
      s += out(i, j);
    }
    for (std::size_t j = 0; j < row.size(); ++j) out(i, j) /= s;
  }
  return tape.record(std::move(out), {m}, [m](const Matrix& y, const Matrix& g) {
    accumulate(m, [&](Matrix& dm) {
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j) dm(i, j) += y(i, j) * (g(i, j) - dot);
      }
    });
  });
}

Tensor dropout(Tape& tape, const Tensor& a, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout probability must lie in [0,1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  Matrix mask(a.rows(), a.cols());
  for (double& v : mask.values()) v = uniform01(rng) >= p ? keep_scale : 0.0;
  Matrix out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= mask[k];
  return tape.record(std::move(out), {a}, [a, mask = std::move(mask)](const Matrix&, const Matrix& g) {
    accumulate(a, [&](Matrix& da) { for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k] * mask[k]; });
  });
}

namespace {

void check_metric_shapes(const char* op, const Tensor& x, const Tensor& alpha) {
  if (alpha.cols() != 1 || alpha.rows() != x.cols()) {
    throw ShapeError(std::string(op) + ": alpha must be [" + std::to_string(x.cols()) +
                     "x1], got " + shapes(x, alpha));
  }
}

Matrix transposed(const Matrix& m) {
  Matrix t = Matrix::uninitialized(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

constexpr std::size_t kTile = 64;

// Copies the upper triangle of a square row-major array onto the lower one.
template <typename T>
void mirror_upper(T* data, std::size_t n) {
  parallel_rows((n + kTile - 1) / kTile, kTile * n, [&](std::size_t bb, std::size_t be) {
    for (std::size_t ib = bb * kTile; ib < std::min(n, be * kTile); ib += kTile) {
      const std::size_t ie = std::min(n, ib + kTile);
      for (std::size_t jb = 0; jb < ie; jb += kTile) {
        const std::size_t je = std::min(ie, jb + kTile);
        for (std::size_t i = ib; i < ie; ++i)
          for (std::size_t j = jb; j < std::min(je, i); ++j) data[i * n + j] = data[j * n + i];
      }
    }
  });
}

void add_alpha_grad(const Tensor& alpha, const Matrix& dalpha_rows) {
  // Every unordered pair was visited from both ends.
  accumulate(alpha, [&](Matrix& g) {
    std::vector<double> total(dalpha_rows.cols(), 0.0);
    for (std::size_t i = 0; i < dalpha_rows.rows(); ++i)
      for (std::size_t q = 0; q < total.size(); ++q) total[q] += dalpha_rows(i, q);
    for (std::size_t q = 0; q < total.size(); ++q) g[q] += 0.5 * total[q];
  });
}

void add_x_grad(const Tensor& x, const Matrix& dx) {
  accumulate(x, [&](Matrix& g) { for (std::size_t k = 0; k < g.size(); ++k) g[k] += dx[k]; });
}

}  // namespace

namespace {

// ReLU activity of the upper triangle, one bit per pair. Rows are padded to
// whole words so rows can be filled in parallel.
class UpperBits {
 public:
  explicit UpperBits(std::size_t n) : n_(n), words_((n + 63) / 64), bits_(n * words_, 0) {}
  // Bits j in [i, n) of row i from s(i, j) >= 0.
  void fill_row(std::size_t i, const double* srow) {
    std::uint64_t* w = bits_.data() + i * words_;
    for (std::size_t j0 = i / 64 * 64; j0 < n_; j0 += 64) {
      std::uint64_t word = 0;
      for (std::size_t b = 0; b < 64 && j0 + b < n_; ++b) {
        const std::size_t j = j0 + b;
        word |= static_cast<std::uint64_t>(j >= i && srow[j] >= 0.0) << b;
      }
      w[j0 / 64] = word;
    }
  }
  // All ones when (i, j) is active, else zero.
  std::uint64_t mask(std::size_t i, std::size_t j) const {
    return std::uint64_t{0} - ((bits_[i * words_ + j / 64] >> (j % 64)) & 1U);
  }
  std::size_t n() const { return n_; }

 private:
  std::size_t n_, words_;
  std::vector<std::uint64_t> bits_;
};

// exp(ReLU(s)) over all pairs into out, with the activity of the upper triangle.
UpperBits dense_metric(const Matrix& xv, const Matrix& xt, const Matrix& alpha, Matrix& out) {
  const std::size_t n = xv.rows(), d = xv.cols();
  const auto& kt = kernels::active();
  UpperBits active(n);
  // s is symmetric: evaluate j >= i, then mirror.
  parallel_rows(n, n * d / 2 + 1, [&](std::size_t rb, std::size_t re) {
    for (std::size_t ib = rb; ib < re; ib += 16) {
      kt.metric_dense(xv.data(), xt.data(), n, d, alpha.data(), ib, std::min(re, ib + 16), ib, out.data());
    }
    for (std::size_t i = rb; i < re; ++i) {
      double* srow = out.row(i).data();
      active.fill_row(i, srow);
      kt.exp_relu(srow + i, n - i);
    }
  });
  mirror_upper(out.data(), n);
  return active;
}

// Symmetrized metric gradient above the diagonal,
//   gs(i,j) = coef(i,j) + coef(j,i) where the pair is active, else 0,
// with coef(i,j) = dL/ds(i,j) before the ReLU mask. Entries on and below the
// diagonal are left unset. coef_row(i, j0, j1, out) writes coef(i, j) for j
// in [j0, j1); the mirrored tile is gathered through it row by row and
// transposed in a small buffer, so every pass over the big arrays is contiguous.
template <typename CoefRow>
Matrix upper_metric_grad(const UpperBits& active, CoefRow&& coef_row) {
  const std::size_t n = active.n();
  Matrix gs = Matrix::uninitialized(n, n);
  parallel_rows((n + kTile - 1) / kTile, kTile * n, [&](std::size_t bb, std::size_t be) {
    std::vector<double> mirrored(kTile * kTile), direct(kTile);
    for (std::size_t ib = bb * kTile; ib < std::min(n, be * kTile); ib += kTile) {
      const std::size_t ie = std::min(n, ib + kTile);
      for (std::size_t jb = ib; jb < n; jb += kTile) {
        const std::size_t je = std::min(n, jb + kTile);
        // mirrored[(i - ib) * kTile + (j - jb)] = coef(j, i)
        for (std::size_t j = jb; j < je; ++j) {
          coef_row(j, ib, ie, direct.data());
          for (std::size_t i = ib; i < ie; ++i) mirrored[(i - ib) * kTile + (j - jb)] = direct[i - ib];
        }
        for (std::size_t i = ib; i < ie; ++i) {
          const std::size_t j0 = std::max(jb, i + 1);
          if (j0 >= je) continue;
          coef_row(i, j0, je, direct.data());
          double* out = gs.row(i).data();
          const double* mrow = mirrored.data() + (i - ib) * kTile - jb;
          for (std::size_t j = j0; j < je; ++j) {
            const double v = direct[j - j0] + mrow[j];
            out[j] = std::bit_cast<double>(std::bit_cast<std::uint64_t>(v) & active.mask(i, j));
          }
        }
      }
    }
  });
  return gs;
}

// Metric backward from the upper symmetrized gradient.
void dense_metric_backward(const Tensor& x, const Tensor& alpha, const Matrix& xt, const Matrix& gs) {
  const std::size_t n = gs.rows(), d = x.cols();
  const auto& kt = kernels::active();
  // Fixed row blocks with private accumulators, added in block order, keep the
  // result independent of the worker count. Blocks b and nb-1-b are paired so
  // workers get similar shares of the triangle.
  constexpr std::size_t kBlock = 256;
  const std::size_t nb = (n + kBlock - 1) / kBlock;
  std::vector<Matrix> acc(nb);
  Matrix dalpha_parts(nb, d);
  const auto run_block = [&](std::size_t b) {
    acc[b] = Matrix(d, n);
    kt.metric_backward_upper(xt.data(), n, d, gs.data(), b * kBlock, std::min(n, (b + 1) * kBlock),
                             acc[b].data(), dalpha_parts.row(b).data());
  };
  parallel_rows((nb + 1) / 2, kBlock * n * d, [&](std::size_t pb, std::size_t pe) {
    for (std::size_t p = pb; p < pe; ++p) {
      run_block(p);
      if (nb - 1 - p != p) run_block(nb - 1 - p);
    }
  });
  const Matrix& av = alpha.value();
  accumulate(x, [&](Matrix& g) {
    Matrix total(d, n);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t k = 0; k < total.size(); ++k) total[k] += acc[b][k];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t q = 0; q < d; ++q) g(i, q) += av[q] * total(q, i);
  });
  accumulate(alpha, [&](Matrix& g) {
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t q = 0; q < d; ++q) g[q] += dalpha_parts(b, q);
  });
}

// Support of a prior with symmetric support, in compressed rows.
struct Support {
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> cols;

  std::size_t count(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  const std::uint32_t* row(std::size_t i) const { return cols.data() + offsets[i]; }
  std::size_t mean_count() const { return cols.size() / std::max<std::size_t>(offsets.size() - 1, 1) + 1; }
};

Support support_of(const Matrix& prior, const char* op) {
  const std::size_t n = prior.rows();
  Support sp;
  sp.offsets.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (prior(i, j) == 0.0) continue;
      if (prior(j, i) == 0.0) throw ShapeError(std::string(op) + ": prior support is not symmetric");
      sp.cols.push_back(static_cast<std::uint32_t>(j));
    }
    sp.offsets[i + 1] = sp.cols.size();
  }
  return sp;
}

// prior * exp(ReLU(s)) on the support into out (zero elsewhere), with activity.
void sparse_metric(const Matrix& xv, const Matrix& alpha, const Matrix& prior, const Support& sp,
                   Matrix& out, std::vector<std::uint8_t>& active) {
  const std::size_t n = xv.rows(), d = xv.cols();
  const auto& kt = kernels::active();
  active.assign(n * n, 0);
  parallel_rows(n, sp.mean_count() * d, [&](std::size_t rb, std::size_t re) {
    std::vector<double> s;
    for (std::size_t i = rb; i < re; ++i) {
      const std::size_t count = sp.count(i);
      const std::uint32_t* js = sp.row(i);
      s.resize(count);
      kt.metric_pairs(xv.data(), d, i, alpha.data(), js, count, s.data());
      for (std::size_t k = 0; k < count; ++k) active[i * n + js[k]] = s[k] >= 0.0 ? 1 : 0;
      kt.exp_relu(s.data(), count);
      for (std::size_t k = 0; k < count; ++k) out(i, js[k]) = prior(i, js[k]) * s[k];
    }
  });
}

// gs(i, j) = dL/ds(i, j) on the support.
template <typename Gs>
void sparse_metric_backward(const Tensor& x, const Tensor& alpha, const Support& sp, Gs&& gs) {
  const std::size_t n = x.rows(), d = x.cols();
  const auto& kt = kernels::active();
  Matrix dx(n, d), dalpha_rows(n, d);
  parallel_rows(n, sp.mean_count() * d, [&](std::size_t rb, std::size_t re) {
    std::vector<double> gsym;
    for (std::size_t i = rb; i < re; ++i) {
      const std::size_t count = sp.count(i);
      const std::uint32_t* js = sp.row(i);
      gsym.resize(count);
      for (std::size_t k = 0; k < count; ++k) gsym[k] = gs(i, js[k]) + gs(js[k], i);
      kt.metric_backward_pairs(x.value().data(), d, i, alpha.value().data(), js, gsym.data(), count,
                               dx.row(i).data(), dalpha_rows.row(i).data());
    }
  });
  add_x_grad(x, dx);
  add_alpha_grad(alpha, dalpha_rows);
}

// Divides each row by its sum in place and returns the sums.
std::vector<double> normalize_rows(Matrix& m, const char* op) {
  const std::size_t n = m.rows();
  std::vector<double> sums(n);
  parallel_rows(n, m.cols(), [&](std::size_t rb, std::size_t re) {
    for (std::size_t i = rb; i < re; ++i) {
      const double* r = m.row(i).data();
      const double s = detail::sum4(m.cols(), [&](std::size_t j) { return r[j]; });
      sums[i] = s;
      if (!(s > 0.0) || !std::isfinite(s)) continue;
      const double inv = 1.0 / s;
      for (double& v : m.row(i)) v *= inv;
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sums[i] > 0.0) || !std::isfinite(sums[i])) throw DegenerateError(std::string(op) + ": zero-sum row", i);
  }
  return sums;
}

}  // namespace

Tensor pairwise_metric(Tape& tape, const Tensor& x, const Tensor& alpha) {
  check_metric_shapes("pairwise_metric", x, alpha);
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows();
  Matrix xt = transposed(xv);
  Matrix out = Matrix::uninitialized(n, n);
  UpperBits active = dense_metric(xv, xt, alpha.value(), out);
  return tape.record(std::move(out), {x, alpha},
                     [x, alpha, xt = std::move(xt), active = std::move(active)](const Matrix& m, const Matrix& g) {
                       if (!x.requires_grad() && !alpha.requires_grad()) return;
                       const Matrix gs = upper_metric_grad(active, [&](std::size_t i, std::size_t j0, std::size_t j1, double* out) {
                         const double* gr = g.row(i).data();
                         const double* mr = m.row(i).data();
                         for (std::size_t j = j0; j < j1; ++j) out[j - j0] = gr[j] * mr[j];
                       });
                       dense_metric_backward(x, alpha, xt, gs);
                     });
}

Tensor prior_weighted_metric(Tape& tape, const Tensor& x, const Tensor& alpha, const Matrix& prior) {
  check_metric_shapes("prior_weighted_metric", x, alpha);
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows();
  if (prior.rows() != n || prior.cols() != n) {
    throw ShapeError("prior_weighted_metric: prior " + prior.shape_string() + " does not match features " +
                     xv.shape_string());
  }
  Support sp = support_of(prior, "prior_weighted_metric");
  Matrix out(n, n);
  std::vector<std::uint8_t> active;
  sparse_metric(xv, alpha.value(), prior, sp, out, active);
  return tape.record(std::move(out), {x, alpha},
                     [x, alpha, sp = std::move(sp), active = std::move(active)](const Matrix& m, const Matrix& g) {
                       if (!x.requires_grad() && !alpha.requires_grad()) return;
                       const std::size_t n = m.rows();
                       // d(prior * exp(s))/ds is the output itself where the ReLU is active.
                       sparse_metric_backward(x, alpha, sp, [&](std::size_t i, std::size_t j) {
                         return active[i * n + j] ? g(i, j) * m(i, j) : 0.0;
                       });
                     });
}

Tensor learned_graph(Tape& tape, const Tensor& x, const Tensor& alpha, const Matrix* prior) {
  check_metric_shapes("learned_graph", x, alpha);
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows();
  // For A = M / rowsum(M) and M = w exp(ReLU(s)):
  //   dL/ds(i,j) = (g(i,j) - sum_k g(i,k) A(i,k)) A(i,j) where the ReLU passes.
  auto row_dots = [](const Matrix& a, const Matrix& g) {
    std::vector<double> dots(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const double* ar = a.row(i).data();
      const double* gr = g.row(i).data();
      dots[i] = detail::sum4(a.cols(), [&](std::size_t j) { return gr[j] * ar[j]; });
    }
    return dots;
  };
  if (prior == nullptr) {
    // All weights negative: s(i,j) <= 0 everywhere, with equality only where
    // x_i == x_j, and there both |x_i - x_j| and sign(0) vanish. The graph is
    // uniform and its gradient is identically zero, so return it as a constant
    // and let every consumer skip its dL/dA pass. (Ignores the case where every
    // alpha_q |dx_q| underflows to zero.)
    const auto av = alpha.value().values();
    if (std::all_of(av.begin(), av.end(), [](double v) { return v < 0.0; })) {
      return Tensor::constant(Matrix(n, n, 1.0 / static_cast<double>(n)));
    }
    Matrix xt = transposed(xv);
    Matrix out = Matrix::uninitialized(n, n);
    UpperBits active = dense_metric(xv, xt, alpha.value(), out);
    normalize_rows(out, "learned_graph");
    return tape.record(std::move(out), {x, alpha},
                       [x, alpha, row_dots, xt = std::move(xt), active = std::move(active)](const Matrix& a,
                                                                                            const Matrix& g) {
                         if (!x.requires_grad() && !alpha.requires_grad()) return;
                         const std::vector<double> dots = row_dots(a, g);
                         const Matrix gs = upper_metric_grad(active, [&](std::size_t i, std::size_t j0, std::size_t j1, double* out) {
                           const double* gr = g.row(i).data();
                           const double* ar = a.row(i).data();
                           const double di = dots[i];
                           for (std::size_t j = j0; j < j1; ++j) out[j - j0] = (gr[j] - di) * ar[j];
                         });
                         dense_metric_backward(x, alpha, xt, gs);
                       });
  }
  if (prior->rows() != n || prior->cols() != n) {
    throw ShapeError("learned_graph: prior " + prior->shape_string() + " does not match features " +
                     xv.shape_string());
  }
  Support sp = support_of(*prior, "learned_graph");
  Matrix out(n, n);
  std::vector<std::uint8_t> active;
  sparse_metric(xv, alpha.value(), *prior, sp, out, active);
  normalize_rows(out, "learned_graph");
  return tape.record(std::move(out), {x, alpha},
                     [x, alpha, row_dots, sp = std::move(sp), active = std::move(active)](const Matrix& a,
                                                                                         const Matrix& g) {
                       if (!x.requires_grad() && !alpha.requires_grad()) return;
                       const std::size_t n = a.rows();
                       const std::vector<double> dots = row_dots(a, g);
                       sparse_metric_backward(x, alpha, sp, [&](std::size_t i, std::size_t j) {
                         return active[i * n + j] ? (g(i, j) - dots[i]) * a(i, j) : 0.0;
                       });
                     });
}

Tensor renormalized_propagate(Tape& tape, const Tensor& a, const Tensor& h, DegreeFrom degree) {
  const std::size_t n = a.rows();
  if (a.cols() != n || h.rows() != n) {
    throw ShapeError("renormalized_propagate: expected [NxN] graph and [NxC] features, got " +
                     shapes(a, h));
  }
  const std::size_t c = h.cols();
  const auto& kt = kernels::active();
  const Matrix& av = a.value();
  std::vector<double> deg(n), s(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = av.row(i).data();
    const double r = (degree == DegreeFrom::kAHat ? 1.0 : 0.0) + detail::sum4(n, [&](std::size_t j) { return row[j]; });
    if (!(r > 0.0) || !std::isfinite(r)) throw DegenerateError("renormalized_propagate: degenerate degree", i);
    deg[i] = r;
    s[i] = 1.0 / std::sqrt(r);
  }
  Matrix hs(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) hs(i, j) = s[i] * h.value()(i, j);
  Matrix t = hs;  // (I + a) * hs
  kt.gemm_nn(av.data(), hs.data(), t.data(), n, n, c, true);
  Matrix out(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = s[i] * t(i, j);

  return tape.record(
      std::move(out), {a, h},
      [a, h, n, c, deg = std::move(deg), s = std::move(s), hs = std::move(hs), t = std::move(t)](
          const Matrix&, const Matrix& g) {
        const auto& kt = kernels::active();
        Matrix gsc(n, c);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) gsc(i, j) = s[i] * g(i, j);
        Matrix dhs = gsc;  // (I + a)^T * gsc
        kt.gemm_tn(a.value().data(), gsc.data(), dhs.data(), n, n, c, true);
        accumulate(h, [&](Matrix& dh) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) dh(i, j) += s[i] * dhs(i, j);
        });
        accumulate(a, [&](Matrix& da) {
          std::vector<double> ddeg(n);
          for (std::size_t i = 0; i < n; ++i) {
            double ds = 0.0;
            for (std::size_t j = 0; j < c; ++j) ds += g(i, j) * t(i, j) + h.value()(i, j) * dhs(i, j);
            ddeg[i] = -0.5 * ds / (deg[i] * std::sqrt(deg[i]));
          }
          kt.gemm_nt(gsc.data(), hs.data(), da.data(), n, c, n, true);
          for (std::size_t i = 0; i < n; ++i)
            for (double& v : da.row(i)) v += ddeg[i];
        });
      });
}

namespace {

// exp(ReLU(f_i + r_j)) for the attention logits. Equal to max(1, exp(f_i) exp(r_j)),
// which needs only 2N exponentials; the direct form is kept for inputs where a
// factor could overflow.
class AttentionWeights {
 public:
  AttentionWeights(std::vector<double> f, std::vector<double> r) : f_(std::move(f)), r_(std::move(r)) {
    factored_ = true;
    for (std::size_t i = 0; i < f_.size(); ++i) {
      factored_ = factored_ && std::abs(f_[i]) < 700.0 && std::abs(r_[i]) < 700.0;
    }
    if (!factored_) return;
    ef_.resize(f_.size());
    er_.resize(r_.size());
    for (std::size_t i = 0; i < f_.size(); ++i) {
      ef_[i] = std::exp(f_[i]);
      er_[i] = std::exp(r_[i]);
    }
  }

  // Weights of row i for every column.
  void row(std::size_t i, double* out) const {
    const std::size_t n = f_.size();
    if (factored_) {
      const double e = ef_[i];
      for (std::size_t j = 0; j < n; ++j) out[j] = std::max(1.0, e * er_[j]);
      return;
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double v = f_[i] + r_[j];
      out[j] = std::exp(v > 0.0 ? v : 0.0);
    }
  }

  double f(std::size_t i) const { return f_[i]; }
  const double* r() const { return r_.data(); }

 private:
  std::vector<double> f_, r_, ef_, er_;
  bool factored_ = true;
};

}  // namespace

Tensor attention_coefficients(Tape& tape, const Tensor& h, const Tensor& a, const Tensor& gamma) {
  const std::size_t n = h.rows(), c = h.cols();
  if (a.rows() != n || a.cols() != n) {
    throw ShapeError("attention_coefficients: graph must be [NxN] for features, got " + shapes(h, a));
  }
  if (gamma.rows() != 2 * c || gamma.cols() != 1) {
    throw ShapeError("attention_coefficients: gamma must be [" + std::to_string(2 * c) +
                     "x1], got " + shapes(h, gamma));
  }
  const Matrix& hv = h.value();
  const Matrix& av = a.value();
  const Matrix& gv = gamma.value();
  std::vector<double> f(n, 0.0), r(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      f[i] += gv[j] * hv(i, j);
      r[i] += gv[c + j] * hv(i, j);
    }
  }
  const AttentionWeights weight(std::move(f), std::move(r));
  Matrix beta = Matrix::uninitialized(n, n);
  std::vector<double> sums(n);
  parallel_rows(n, n, [&](std::size_t rb, std::size_t re) {
    std::vector<double> w(n);
    for (std::size_t i = rb; i < re; ++i) {
      weight.row(i, w.data());
      double* brow = beta.row(i).data();
      const double* arow = av.row(i).data();
      const double total = detail::sum4(n, [&](std::size_t j) { return brow[j] = w[j] * arow[j]; });
      sums[i] = total;
      if (!(total > 0.0) || !std::isfinite(total)) continue;
      const double inv = 1.0 / total;
      for (std::size_t j = 0; j < n; ++j) brow[j] *= inv;
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sums[i] > 0.0) || !std::isfinite(sums[i])) {
      throw DegenerateError("attention_coefficients: zero attention row", i);
    }
  }
  return tape.record(
      std::move(beta), {h, a, gamma},
      [h, a, gamma, n, c, weight = std::move(weight), sums = std::move(sums)](
          const Matrix& beta, const Matrix& g) {
        std::vector<double> df(n, 0.0), dr_rows(n, 0.0);
        Tensor at = a;
        Matrix* da = at.requires_grad() ? &at.grad_buffer() : nullptr;
        // dr gathers over rows: fixed row blocks keep partial sums that are
        // added in block order, whatever the worker count.
        constexpr std::size_t kBlock = 256;
        const std::size_t blocks = (n + kBlock - 1) / kBlock;
        Matrix dr_parts(blocks, n);
        parallel_rows(blocks, kBlock * n, [&](std::size_t bb, std::size_t be) {
          for (std::size_t b = bb; b < be; ++b) {
            double* dr = dr_parts.row(b).data();
            std::vector<double> w(da != nullptr ? n : 0);
            const double* r = weight.r();
            for (std::size_t i = b * kBlock; i < std::min(n, (b + 1) * kBlock); ++i) {
              const double* grow = g.row(i).data();
              const double* brow = beta.row(i).data();
              const double dot = detail::sum4(n, [&](std::size_t j) { return grow[j] * brow[j]; });
              const double inv = 1.0 / sums[i];
              if (da != nullptr) {
                weight.row(i, w.data());
                double* darow = da->row(i).data();
                for (std::size_t j = 0; j < n; ++j) darow[j] += (grow[j] - dot) * inv * w[j];
              }
              // d/d(f_i + r_j) of beta_hat is beta_hat where the ReLU passes.
              const double fi = weight.f(i);
              const double dfi = detail::sum4(n, [&](std::size_t j) {
                const double de = fi + r[j] >= 0.0 ? (grow[j] - dot) * brow[j] : 0.0;
                dr[j] += de;
                return de;
              });
              df[i] = dfi;
            }
          }
        });
        for (std::size_t b = 0; b < blocks; ++b)
          for (std::size_t j = 0; j < n; ++j) dr_rows[j] += dr_parts(b, j);
        const Matrix& hv = h.value();
        const Matrix& gv = gamma.value();
        accumulate(h, [&](Matrix& dh) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) dh(i, j) += df[i] * gv[j] + dr_rows[i] * gv[c + j];
        });
        accumulate(gamma, [&](Matrix& dg) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              dg[j] += df[i] * hv(i, j);
              dg[c + j] += dr_rows[i] * hv(i, j);
            }
        });
      });
}

}  // namespace glssl::ops
