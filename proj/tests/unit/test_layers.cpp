#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "glssl/errors.hpp"
#include "glssl/graph_prior.hpp"
#include "glssl/layers.hpp"
#include "glssl/losses.hpp"
#include "op_check.hpp"
#include "oracles.hpp"

using namespace glssl;
using testing_util::op_grad_error;
using V = std::vector<Tensor>;

namespace {

Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1;
  return m;
}

double max_row_sum_error(const Matrix& m) {
  double worst = 0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0;
    for (double v : m.row(i)) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

std::vector<Edge> random_edges(std::size_t n, Rng& rng) {
  std::vector<Edge> e;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (uniform01(rng) < 0.3) e.emplace_back(i, j);
  return e;
}

}  // namespace

TEST_CASE("prior from a single edge") {
  const GraphPrior p = build_prior(3, std::vector<Edge>{{0, 1}});
  const Matrix& a = p.normalized();
  const double want[3][3] = {{0.5, 0.5, 0}, {0.5, 0.5, 0}, {0, 0, 1}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(a(i, j) == want[i][j]);
  CHECK(p.has_edges());
  CHECK(p.in_support(1, 0));
  CHECK_FALSE(p.in_support(0, 2));
}

TEST_CASE("ones prior") {
  const GraphPrior two = build_prior(2, std::nullopt);
  CHECK(two.mode() == GraphPrior::Mode::kOnes);
  for (double v : two.normalized().values()) CHECK(v == 0.5);
  CHECK(build_prior(1, std::nullopt).normalized()(0, 0) == 1.0);
  const Matrix adj = build_prior(3, std::nullopt).binary_adjacency();
  CHECK(adj(0, 0) == 0.0);
  CHECK(adj(0, 2) == 1.0);
}

TEST_CASE("prior ignores duplicates, direction and self-loops in the input") {
  const GraphPrior a = build_prior(4, std::vector<Edge>{{0, 1}, {2, 3}});
  const GraphPrior b = build_prior(4, std::vector<Edge>{{1, 0}, {0, 1}, {3, 2}, {2, 2}, {0, 1}});
  CHECK(oracle::max_abs_diff(a.normalized(), b.normalized()) == 0.0);
  CHECK(a.edges() == b.edges());
  CHECK(a.edges().size() == 2);
}

TEST_CASE("prior support is the symmetrized edge set plus self-loops") {
  Rng rng = make_rng(11, 0);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 2 + static_cast<std::size_t>(rep);
    const auto edges = random_edges(n, rng);
    const GraphPrior p = build_prior(n, edges);
    Matrix want(n, n);
    for (std::size_t i = 0; i < n; ++i) want(i, i) = 1;
    for (const auto& [i, j] : edges) want(i, j) = want(j, i) = 1;
    const Matrix& a = p.normalized();
    CHECK(max_row_sum_error(a) < 1e-12);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        CHECK((a(i, j) > 0) == (want(i, j) > 0));
        CHECK(p.in_support(i, j) == (want(i, j) > 0));
      }
  }
}

TEST_CASE("prior rejects out-of-range edges") {
  CHECK_THROWS_AS(build_prior(3, std::vector<Edge>{{0, 3}}), IngestionError);
}

TEST_CASE("linear projection") {
  Rng rng = make_rng(12, 0);
  const Matrix x = oracle::random_matrix(4, 6, rng);
  const Matrix p = oracle::random_matrix(6, 3, rng);
  Tape tape;
  CHECK(oracle::max_abs_diff(layers::linear_projection(tape, Tensor::constant(x), Tensor::constant(identity(6))).value(),
                             x) == 0.0);
  CHECK(oracle::max_abs_diff(layers::linear_projection(tape, Tensor::constant(x), Tensor::constant(p)).value(),
                             oracle::matmul(x, p)) < 1e-14);
  const Matrix zero = layers::linear_projection(tape, Tensor::constant(Matrix(4, 6)), Tensor::constant(p)).value();
  for (double v : zero.values()) CHECK(v == 0.0);
}

TEST_CASE("metric and learned graph on the three point example") {
  Matrix x(3, 2);
  x(1, 0) = 1;
  x(2, 1) = 2;
  const Matrix alpha(2, 1, 1.0);
  Tape tape;
  const Matrix m = ops::pairwise_metric(tape, Tensor::constant(x), Tensor::constant(alpha)).value();
  const double e = std::numbers::e;
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == doctest::Approx(e).epsilon(1e-15));
  CHECK(m(0, 2) == doctest::Approx(e * e).epsilon(1e-15));
  const Matrix a =
      layers::graph_learning(tape, Tensor::constant(x), Tensor::constant(alpha), build_prior(3, std::nullopt)).value();
  const double z = 1 + e + e * e;
  CHECK(a(0, 0) == doctest::Approx(1 / z).epsilon(1e-15));
  CHECK(a(0, 1) == doctest::Approx(e / z).epsilon(1e-15));
  CHECK(a(0, 2) == doctest::Approx(e * e / z).epsilon(1e-15));
}

TEST_CASE("graph learning special cases") {
  Rng rng = make_rng(13, 0);
  const Matrix x = oracle::random_matrix(5, 3, rng);
  const GraphPrior prior = build_prior(5, random_edges(5, rng));
  Tape tape;
  const Matrix a0 = layers::graph_learning(tape, Tensor::constant(x), Tensor::constant(Matrix(3, 1)), prior).value();
  CHECK(oracle::max_abs_diff(a0, prior.normalized()) < 1e-15);

  const Matrix same(4, 3, 0.7);
  const Matrix uniform =
      layers::graph_learning(tape, Tensor::constant(same), Tensor::constant(oracle::random_matrix(3, 1, rng)),
                             build_prior(4, std::nullopt))
          .value();
  for (double v : uniform.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("negative metric weights give a uniform graph with no gradient") {
  Rng rng = make_rng(41, 0);
  Matrix x = oracle::random_matrix(6, 4, rng);
  x.row(3)[0] = x.row(1)[0];  // a tie in one column
  const Matrix alpha = oracle::random_matrix(4, 1, rng, -1.0, -0.01);
  const GraphPrior none = build_prior(6, std::nullopt);
  Tape tape;
  const Tensor xp = Tensor::parameter(x), ap = Tensor::parameter(alpha);
  const Tensor a = layers::graph_learning(tape, xp, ap, none);
  CHECK(oracle::max_abs_diff(a.value(), oracle::graph_learning(x, alpha, none.normalized())) < 1e-15);
  CHECK_FALSE(a.requires_grad());
  // The general path agrees: a weight of exactly zero keeps it.
  Matrix alpha_zero = alpha;
  alpha_zero[2] = 0.0;
  CHECK(op_grad_error([&](Tape& t, const V& in) { return layers::graph_learning(t, in[0], in[1], none); },
                      {x, alpha_zero}) < 1e-5);
  CHECK(op_grad_error([&](Tape& t, const V& in) { return layers::graph_learning(t, in[0], in[1], none); },
                      {x, alpha}) == 0.0);
}

TEST_CASE("graph learning is invariant to scaling x against alpha") {
  Rng rng = make_rng(14, 0);
  const Matrix x = oracle::random_matrix(5, 3, rng);
  const Matrix alpha = oracle::random_matrix(3, 1, rng, -0.2, 1.0);
  Matrix x2 = x, alpha2 = alpha;
  for (double& v : x2.values()) v *= 4.0;
  for (double& v : alpha2.values()) v /= 4.0;
  const GraphPrior prior = build_prior(5, random_edges(5, rng));
  Tape tape;
  const Matrix a = layers::graph_learning(tape, Tensor::constant(x), Tensor::constant(alpha), prior).value();
  const Matrix b = layers::graph_learning(tape, Tensor::constant(x2), Tensor::constant(alpha2), prior).value();
  CHECK(oracle::max_abs_diff(a, b) < 1e-14);
}

TEST_CASE("layers match double-loop references on random instances") {
  Rng rng = make_rng(15, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 1 + static_cast<std::size_t>(rep) % 5;
    const std::size_t d = 2 + static_cast<std::size_t>(rep) % 3, c = 3;
    const Matrix x = oracle::random_matrix(n, d, rng);
    const Matrix alpha = oracle::random_matrix(d, 1, rng, -0.5, 1.0);
    const auto edges = random_edges(n, rng);
    const bool use_edges = rep % 2 == 0;
    const GraphPrior prior = build_prior(n, use_edges ? std::optional(edges) : std::nullopt);
    Tape tape;
    const Matrix a = layers::graph_learning(tape, Tensor::constant(x), Tensor::constant(alpha), prior).value();
    CHECK(oracle::max_abs_diff(a, oracle::graph_learning(x, alpha, prior.normalized())) < 1e-10);
    CHECK(max_row_sum_error(a) < 1e-9);

    const Matrix w = oracle::random_matrix(d, c, rng);
    for (auto mode : {ops::DegreeFrom::kAHat, ops::DegreeFrom::kA}) {
      const Matrix conv = layers::graph_conv(tape, Tensor::constant(x), Tensor::constant(a), Tensor::constant(w), mode).value();
      CHECK(oracle::max_abs_diff(conv, oracle::graph_conv(x, a, w, mode == ops::DegreeFrom::kA)) < 1e-10);
    }

    const Matrix gamma = oracle::random_matrix(2 * c, 1, rng, -0.5, 1.0);
    const auto att =
        layers::graph_attention(tape, Tensor::constant(x), Tensor::constant(a), Tensor::constant(w), Tensor::constant(gamma));
    const auto want = oracle::graph_attention(x, a, w, gamma);
    CHECK(oracle::max_abs_diff(att.out.value(), want.out) < 1e-10);
    CHECK(oracle::max_abs_diff(att.beta.value(), want.beta) < 1e-10);
    CHECK(max_row_sum_error(att.beta.value()) < 1e-9);
    for (std::size_t k = 0; k < a.size(); ++k)
      if (a[k] == 0.0) CHECK(att.beta.value()[k] == 0.0);
  }
}

TEST_CASE("graph convolution reduces to averaging with a row-stochastic graph") {
  Rng rng = make_rng(16, 0);
  const Matrix a = oracle::row_normalize(oracle::random_matrix(4, 4, rng, 0.0, 1.0));
  const Matrix x = oracle::random_matrix(4, 3, rng), w = oracle::random_matrix(3, 2, rng);
  Matrix half = identity(4);
  for (std::size_t k = 0; k < half.size(); ++k) half[k] = (half[k] + a[k]) / 2;
  Tape tape;
  const Matrix got = layers::graph_conv(tape, Tensor::constant(x), Tensor::constant(a), Tensor::constant(w)).value();
  CHECK(oracle::max_abs_diff(got, oracle::relu(oracle::matmul(oracle::matmul(half, x), w))) < 1e-14);

  Matrix xpos = x;
  for (double& v : xpos.values()) v = std::abs(v);
  const Matrix passthrough =
      layers::graph_conv(tape, Tensor::constant(xpos), Tensor::constant(Matrix(4, 4)), Tensor::constant(identity(3)))
          .value();
  CHECK(oracle::max_abs_diff(passthrough, xpos) < 1e-15);
}

TEST_CASE("attention special cases") {
  Rng rng = make_rng(17, 0);
  const Matrix a = oracle::row_normalize(oracle::random_matrix(4, 4, rng, 0.0, 1.0));
  const Matrix x = oracle::random_matrix(4, 3, rng), w = oracle::random_matrix(3, 2, rng);
  Tape tape;
  const auto att = layers::graph_attention(tape, Tensor::constant(x), Tensor::constant(a), Tensor::constant(w),
                                           Tensor::constant(Matrix(4, 1)));
  CHECK(oracle::max_abs_diff(att.beta.value(), a) < 1e-15);
  CHECK(oracle::max_abs_diff(att.out.value(), oracle::relu(oracle::matmul(oracle::matmul(a, x), w))) < 1e-14);

  const Matrix x1 = oracle::random_matrix(1, 3, rng);
  const auto one = layers::graph_attention(tape, Tensor::constant(x1), Tensor::constant(Matrix(1, 1, 1.0)),
                                           Tensor::constant(w), Tensor::constant(oracle::random_matrix(4, 1, rng)));
  CHECK(one.beta.value()(0, 0) == 1.0);
  CHECK(oracle::max_abs_diff(one.out.value(), oracle::relu(oracle::matmul(x1, w))) < 1e-15);
}

TEST_CASE("fusion") {
  Rng rng = make_rng(18, 0);
  const Matrix x2 = oracle::random_matrix(4, 3, rng), x3 = oracle::random_matrix(4, 3, rng),
               x4 = oracle::random_matrix(4, 3, rng);
  Tape tape;
  auto fuse = [&](const Matrix& a, const Matrix& b, const Matrix& c, std::vector<double> eta) {
    return layers::fusion(tape, Tensor::constant(a), Tensor::constant(b), Tensor::constant(c),
                          Tensor::constant(Matrix(3, 1, std::move(eta))))
        .value();
  };
  CHECK(oracle::max_abs_diff(fuse(x2, x3, x4, {1, 0, 0}), oracle::row_softmax(x2)) < 1e-15);
  Matrix scaled = x2;
  for (double& v : scaled.values()) v *= 0.9;
  CHECK(oracle::max_abs_diff(fuse(x2, x2, x2, {0.2, 0.3, 0.4}), oracle::row_softmax(scaled)) < 1e-15);
  const Matrix flat(2, 4, 1.5);
  const Matrix uniform = fuse(flat, flat, flat, {0.1, 0.5, -0.2});
  for (double v : uniform.values()) CHECK(v == doctest::Approx(0.25));
  CHECK_THROWS_AS(fuse(x2, x3, Matrix(4, 2), {1, 1, 1}), ShapeError);
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng = make_rng(19, 0);
  const std::size_t n = 6, d = 4, c = 3;
  const Matrix x = oracle::random_matrix(n, d, rng);
  const Matrix alpha = oracle::random_matrix(d, 1, rng, -0.3, 1.0);
  const Matrix a = oracle::random_prior(n, rng);
  const Matrix w = oracle::random_matrix(d, c, rng);
  const Matrix gamma = oracle::random_matrix(2 * c, 1, rng, -0.3, 1.0);
  const GraphPrior prior = build_prior(n, random_edges(n, rng));
  CHECK(op_grad_error([&](Tape& t, const V& in) { return layers::graph_learning(t, in[0], in[1], prior); },
                      {x, alpha}) < 1e-5);
  CHECK(op_grad_error([](Tape& t, const V& in) { return layers::graph_conv(t, in[0], in[1], in[2]); }, {x, a, w}) <
        1e-5);
  CHECK(op_grad_error([](Tape& t, const V& in) { return layers::graph_attention(t, in[0], in[1], in[2], in[3]).out; },
                      {x, a, w, gamma}) < 1e-5);
  CHECK(op_grad_error([](Tape& t, const V& in) { return layers::fusion(t, in[0], in[1], in[2], in[3]); },
                      {oracle::random_matrix(n, c, rng), oracle::random_matrix(n, c, rng),
                       oracle::random_matrix(n, c, rng), oracle::random_matrix(3, 1, rng)}) < 1e-5);
}

TEST_CASE("classification loss") {
  Tape tape;
  const std::vector<int> y{0, 1};
  const std::vector<std::size_t> s{0};
  const Matrix half(2, 2, 0.5);
  CHECK(losses::classification_loss(tape, Tensor::constant(half), y, s).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  Matrix exact(2, 2);
  exact(0, 0) = exact(1, 1) = 1;
  const std::vector<std::size_t> both{0, 1};
  CHECK(losses::classification_loss(tape, Tensor::constant(exact), y, both).item() == 0.0);
  const std::vector<std::size_t> twice{0, 0};
  CHECK(losses::classification_loss(tape, Tensor::constant(half), y, twice).item() ==
        doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));
  Matrix wrong(2, 2);
  wrong(0, 1) = 1;
  CHECK(losses::classification_loss(tape, Tensor::constant(wrong), y, s).item() ==
        doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(losses::classification_loss(tape, Tensor::constant(half), y, std::vector<std::size_t>{}),
                  ConfigError);
  CHECK_THROWS_AS(losses::classification_loss(tape, Tensor::constant(half), std::vector<int>{0, 2}, both),
                  IngestionError);
}

TEST_CASE("graph loss") {
  const losses::LossWeights w;
  Rng rng = make_rng(20, 0);
  Tape tape;
  const std::size_t n = 4;
  const Matrix x = oracle::random_matrix(n, 3, rng);
  const Tensor eye = Tensor::constant(identity(n));
  CHECK(losses::graph_loss(tape, Tensor::constant(x), eye, eye, w).item() ==
        doctest::Approx(w.lambda2 * 2 * n).epsilon(1e-13));

  for (int rep = 0; rep < 20; ++rep) {
    const Matrix a0 = oracle::row_normalize(oracle::random_matrix(n, n, rng, 0.0, 1.0));
    const Matrix a1 = oracle::row_normalize(oracle::random_matrix(n, n, rng, 0.0, 1.0));
    const double got = losses::graph_loss(tape, Tensor::constant(x), Tensor::constant(a0), Tensor::constant(a1), w).item();
    CHECK(std::abs(got - oracle::graph_loss(x, a0, a1, w.lambda1, w.lambda2, w.lambda3)) < 1e-12);
    // Consistency term vanishes for equal graphs.
    const double same = losses::graph_loss(tape, Tensor::constant(x), Tensor::constant(a0), Tensor::constant(a0),
                                           {0, 0, 1})
                            .item();
    CHECK(same == 0.0);
  }
  CHECK(op_grad_error(
            [&](Tape& t, const V& in) { return losses::graph_loss(t, Tensor::constant(x), in[0], in[1], w); },
            {oracle::random_matrix(n, n, rng), oracle::random_matrix(n, n, rng)}) < 1e-6);
  CHECK_THROWS_AS(losses::graph_loss(tape, Tensor::constant(x), eye, Tensor::constant(identity(3)), w), ShapeError);
}

TEST_CASE("graph loss is invariant under a consistent node permutation") {
  Rng rng = make_rng(21, 0);
  const std::size_t n = 5;
  const Matrix x = oracle::random_matrix(n, 3, rng);
  const Matrix a0 = oracle::row_normalize(oracle::random_matrix(n, n, rng, 0.0, 1.0));
  const Matrix a1 = oracle::row_normalize(oracle::random_matrix(n, n, rng, 0.0, 1.0));
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  Matrix px(n, 3), p0(n, n), p1(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < 3; ++q) px(i, q) = x(perm[i], q);
    for (std::size_t j = 0; j < n; ++j) {
      p0(i, j) = a0(perm[i], perm[j]);
      p1(i, j) = a1(perm[i], perm[j]);
    }
  }
  Tape tape;
  const losses::LossWeights w;
  const double a = losses::graph_loss(tape, Tensor::constant(x), Tensor::constant(a0), Tensor::constant(a1), w).item();
  const double b = losses::graph_loss(tape, Tensor::constant(px), Tensor::constant(p0), Tensor::constant(p1), w).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-13));
}

TEST_CASE("laplacian term with layer features matches the trace identity") {
  Rng rng = make_rng(22, 0);
  const Matrix x = oracle::random_matrix(5, 3, rng);
  const Matrix a = oracle::random_matrix(5, 5, rng);
  Tape tape;
  CHECK(losses::laplacian_term(tape, Tensor::constant(a), Tensor::constant(x)).item() ==
        doctest::Approx(oracle::laplacian(x, a)).epsilon(1e-13));
  const auto target = losses::make_smoothness_target(x);
  CHECK(losses::laplacian_term(tape, Tensor::constant(a), target).item() ==
        doctest::Approx(oracle::laplacian(x, a)).epsilon(1e-13));
}

TEST_CASE("total loss") {
  Tape tape;
  auto s = [](double v) { return Tensor::constant(Matrix(1, 1, v)); };
  CHECK(losses::total_loss(tape, s(0.5), s(0.25)).item() == 0.75);
  CHECK(losses::total_loss(tape, s(0.5), s(0)).item() == 0.5);
  CHECK(losses::total_loss(tape, s(0), s(0.25)).item() == 0.25);
}
