#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>

#include "glssl/dataset.hpp"
#include "glssl/errors.hpp"
#include "glssl/projection.hpp"
#include "oracles.hpp"
#include "paths.hpp"

using namespace glssl;

TEST_CASE("two-column data is recovered exactly") {
  Rng rng = make_rng(31, 0);
  const Matrix x = oracle::random_matrix(40, 2, rng, -3.0, 5.0);
  const Projection p = project_2d(x);
  double worst = 0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t q = 0; q < 2; ++q) {
      const double back = p.mean[q] + p.coords(i, 0) * p.components(q, 0) + p.coords(i, 1) * p.components(q, 1);
      worst = std::max(worst, std::abs(back - x(i, q)));
    }
  CHECK(worst < 1e-9);
}

TEST_CASE("rank-two data in more columns is recovered exactly") {
  Rng rng = make_rng(32, 0);
  const Matrix basis = oracle::random_matrix(2, 5, rng);
  const Matrix coef = oracle::random_matrix(50, 2, rng, -4.0, 4.0);
  const Matrix x = oracle::matmul(coef, basis);
  const Projection p = project_2d(x);
  double worst = 0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t q = 0; q < 5; ++q) {
      const double back = p.mean[q] + p.coords(i, 0) * p.components(q, 0) + p.coords(i, 1) * p.components(q, 1);
      worst = std::max(worst, std::abs(back - x(i, q)));
    }
  CHECK(worst < 1e-8);
}

TEST_CASE("components are orthonormal, sign-fixed and ordered by variance") {
  Rng rng = make_rng(33, 0);
  Matrix x = oracle::random_matrix(200, 4, rng);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    x(i, 2) *= 10.0;
    x(i, 0) *= 3.0;
  }
  const Projection p = project_2d(x);
  double n0 = 0, n1 = 0, dot = 0;
  for (std::size_t q = 0; q < 4; ++q) {
    n0 += p.components(q, 0) * p.components(q, 0);
    n1 += p.components(q, 1) * p.components(q, 1);
    dot += p.components(q, 0) * p.components(q, 1);
  }
  CHECK(n0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(n1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(dot) < 1e-9);
  CHECK(p.variance[0] >= p.variance[1]);
  CHECK(std::abs(p.components(2, 0)) > 0.99);
  CHECK(p.components(2, 0) > 0);
  CHECK(std::abs(p.components(0, 1)) > 0.99);
  CHECK(p.components(0, 1) > 0);
  // Variance along each component equals its eigenvalue.
  double v0 = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) v0 += p.coords(i, 0) * p.coords(i, 0);
  CHECK(v0 / static_cast<double>(x.rows()) == doctest::Approx(p.variance[0]).epsilon(1e-9));
}

TEST_CASE("projection input checks") {
  CHECK_THROWS_AS(project_2d(Matrix(5, 1)), ShapeError);
  CHECK_THROWS_AS(project_2d(Matrix(0, 3)), ShapeError);
  const Projection flat = project_2d(Matrix(4, 3, 2.0));
  for (double v : flat.coords.values()) CHECK(v == 0.0);
}

TEST_CASE("well separated classes stay separable in the plane") {
  SyntheticSpec s;
  s.classes = 3;
  s.per_class = 300;
  s.dim = 30;
  s.val_per_class = 50;
  const Dataset d = generate_synthetic(s);
  const Projection p = project_2d(d.x);
  double mean[3][2] = {};
  for (std::size_t i = 0; i < d.n(); ++i)
    for (std::size_t k = 0; k < 2; ++k) mean[d.y[i]][k] += p.coords(i, k) / 300.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    int best = 0;
    double best_d = INFINITY;
    for (int c = 0; c < 3; ++c) {
      const double dx = p.coords(i, 0) - mean[c][0], dy = p.coords(i, 1) - mean[c][1];
      if (dx * dx + dy * dy < best_d) {
        best_d = dx * dx + dy * dy;
        best = c;
      }
    }
    correct += best == d.y[i];
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(d.n()) >= 0.99);
}

TEST_CASE("projection csv has one row per node in index order") {
  const Dataset d = load_bundle(test_paths::fixture());
  const Projection p = project_2d(d.x);
  const auto dir = test_paths::scratch("projection");
  write_projection_csv(dir / "nodes.csv", p, d);
  std::ifstream in(dir / "nodes.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "x,y,label,split");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto last = line.rfind(',');
    const std::string split = line.substr(last + 1);
    const std::string expect = std::find(d.train.begin(), d.train.end(), rows) != d.train.end() ? "train"
                               : std::find(d.val.begin(), d.val.end(), rows) != d.val.end()   ? "val"
                                                                                               : "test";
    CHECK(split == expect);
    const auto prev = line.rfind(',', last - 1);
    CHECK(std::stoi(line.substr(prev + 1, last - prev - 1)) == d.y[rows]);
    ++rows;
  }
  CHECK(rows == 30);
  Projection short_p = p;
  short_p.coords = Matrix(3, 2);
  CHECK_THROWS_AS(write_projection_csv(dir / "bad.csv", short_p, d), ShapeError);
}
