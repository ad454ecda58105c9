#include "glssl/projection.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>

#include "glssl/errors.hpp"

namespace glssl {
namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec mat_vec(const Matrix& c, const Vec& v) {
  Vec out(c.rows(), 0.0);
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) out[i] += c(i, j) * v[j];
  return out;
}

// Modified Gram-Schmidt in place. A column that collapses (C has lower rank
// than the block) is replaced by the next coordinate axis not yet spanned.
void orthonormalize(std::vector<Vec>& cols) {
  const std::size_t d = cols.front().size();
  std::size_t axis = 0;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    for (int pass = 0; pass < 2; ++pass) {
      const double before = std::sqrt(dot(cols[k], cols[k]));
      for (std::size_t m = 0; m < k; ++m) {
        const double p = dot(cols[k], cols[m]);
        for (std::size_t i = 0; i < d; ++i) cols[k][i] -= p * cols[m][i];
      }
      const double after = std::sqrt(dot(cols[k], cols[k]));
      if (after > 1e-10 * before && after > 0.0 && std::isfinite(after)) {
        for (double& x : cols[k]) x /= after;
        continue;
      }
      if (axis >= d) throw DegenerateError("project_2d: could not complete an orthonormal basis", k);
      cols[k].assign(d, 0.0);
      cols[k][axis++] = 1.0;
      pass = -1;
    }
  }
}

// Cyclic Jacobi on a small symmetric matrix. Returns eigenvalues descending and
// the matching eigenvectors as columns of `vecs`.
void symmetric_eigen(Matrix h, Vec& values, Matrix& vecs) {
  const std::size_t k = h.rows();
  vecs = Matrix::identity(k);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, total = 0.0;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        total += h(a, b) * h(a, b);
        if (a != b) off += h(a, b) * h(a, b);
      }
    if (off <= 1e-30 * total || off == 0.0) break;
    for (std::size_t p = 0; p + 1 < k; ++p)
      for (std::size_t q = p + 1; q < k; ++q) {
        if (h(p, q) == 0.0) continue;
        const double theta = (h(q, q) - h(p, p)) / (2.0 * h(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t r = 0; r < k; ++r) {
          const double hp = h(r, p), hq = h(r, q);
          h(r, p) = c * hp - s * hq;
          h(r, q) = s * hp + c * hq;
        }
        for (std::size_t r = 0; r < k; ++r) {
          const double hp = h(p, r), hq = h(q, r);
          h(p, r) = c * hp - s * hq;
          h(q, r) = s * hp + c * hq;
        }
        for (std::size_t r = 0; r < k; ++r) {
          const double vp = vecs(r, p), vq = vecs(r, q);
          vecs(r, p) = c * vp - s * vq;
          vecs(r, q) = s * vp + c * vq;
        }
      }
  }
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return h(a, a) > h(b, b); });
  values.resize(k);
  Matrix sorted(k, k);
  for (std::size_t c = 0; c < k; ++c) {
    values[c] = h(order[c], order[c]);
    for (std::size_t r = 0; r < k; ++r) sorted(r, c) = vecs(r, order[c]);
  }
  vecs = std::move(sorted);
}

void fix_sign(Vec& v) {
  std::size_t k = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[k])) k = i;
  if (!v.empty() && v[k] < 0.0)
    for (double& x : v) x = -x;
}

}  // namespace

Projection project_2d(const Matrix& x, double tol, std::size_t max_iter) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0 || d < 2) throw ShapeError("project_2d: need at least one row and two columns, got " + x.shape_string());
  Projection p;
  p.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) p.mean[j] += x(i, j);
  for (double& m : p.mean) m /= static_cast<double>(n);
  Matrix centred(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centred(i, j) = x(i, j) - p.mean[j];
  Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double v = centred(i, a);
      if (v == 0.0) continue;
      for (std::size_t b = 0; b < d; ++b) cov(a, b) += v * centred(i, b);
    }
  for (double& v : cov.values()) v /= static_cast<double>(n);
  double scale = 0.0;
  for (double v : cov.values()) scale += v * v;
  scale = std::max(1.0, std::sqrt(scale));

  // Subspace iteration with Rayleigh-Ritz. The extra block columns make the
  // rate depend on the gap below the block rather than between the top two.
  const std::size_t k = std::min<std::size_t>(d, 8);
  std::vector<Vec> basis(k, Vec(d));
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t i = 0; i < d; ++i)
      basis[c][i] = std::sin(1.0 + 2.3 * static_cast<double>(i) + 0.7 * static_cast<double>(c * c + 1));
  orthonormalize(basis);
  Vec values;
  Matrix rot;
  for (std::size_t it = 0;; ++it) {
    std::vector<Vec> image(k);
    for (std::size_t c = 0; c < k; ++c) image[c] = mat_vec(cov, basis[c]);
    Matrix h(k, k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) h(a, b) = 0.5 * (dot(basis[a], image[b]) + dot(basis[b], image[a]));
    symmetric_eigen(h, values, rot);
    std::vector<Vec> ritz(k, Vec(d, 0.0)), ritz_image(k, Vec(d, 0.0));
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t m = 0; m < k; ++m)
        for (std::size_t i = 0; i < d; ++i) {
          ritz[c][i] += rot(m, c) * basis[m][i];
          ritz_image[c][i] += rot(m, c) * image[m][i];
        }
    double worst = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
      double r = 0.0;
      for (std::size_t i = 0; i < d; ++i) r += std::pow(ritz_image[c][i] - values[c] * ritz[c][i], 2);
      worst = std::max(worst, std::sqrt(r));
    }
    if (worst <= tol * scale) {
      basis = std::move(ritz);
      break;
    }
    if (it + 1 >= max_iter) throw DegenerateError("project_2d: subspace iteration did not converge", 0);
    basis = std::move(ritz_image);
    orthonormalize(basis);
  }
  fix_sign(basis[0]);
  fix_sign(basis[1]);

  p.variance = {values[0], values[1]};
  p.components = Matrix(d, 2);
  for (std::size_t j = 0; j < d; ++j) {
    p.components(j, 0) = basis[0][j];
    p.components(j, 1) = basis[1][j];
  }
  p.coords = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      p.coords(i, 0) += centred(i, j) * basis[0][j];
      p.coords(i, 1) += centred(i, j) * basis[1][j];
    }
  return p;
}

void write_projection_csv(const std::filesystem::path& path, const Projection& p, const Dataset& d) {
  if (p.coords.rows() != d.n()) {
    throw ShapeError("write_projection_csv: " + std::to_string(p.coords.rows()) + " projected rows for " +
                     std::to_string(d.n()) + " nodes");
  }
  std::vector<const char*> split(d.n(), "none");
  for (std::size_t i : d.train) split[i] = "train";
  for (std::size_t i : d.val) split[i] = "val";
  for (std::size_t i : d.test) split[i] = "test";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << "x,y,label,split\n";
  char buf[64];
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      const auto r = std::to_chars(buf, buf + sizeof buf, p.coords(i, k));
      out.write(buf, r.ptr - buf);
      out << ',';
    }
    out << d.y[i] << ',' << split[i] << '\n';
  }
  if (!out) throw IngestionError("failed writing " + path.string());
}

}  // namespace glssl
