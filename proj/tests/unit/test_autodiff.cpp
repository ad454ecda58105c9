#include <doctest.h>

#include <cmath>
#include <vector>

#include "glssl/errors.hpp"
#include "glssl/ops.hpp"
#include "op_check.hpp"
#include "oracles.hpp"

using namespace glssl;
using testing_util::op_grad_error;
using V = std::vector<Tensor>;

namespace {

Rng rng_for(std::uint64_t s) { return make_rng(s, 7); }

constexpr double kGradTol = 1e-6;

}  // namespace

TEST_CASE("matmul matches the naive product and its gradient") {
  Rng rng = rng_for(1);
  const Matrix a = oracle::random_matrix(4, 6, rng), b = oracle::random_matrix(6, 3, rng);
  Tape tape;
  const Tensor c = ops::matmul(tape, Tensor::constant(a), Tensor::constant(b));
  CHECK(oracle::max_abs_diff(c.value(), oracle::matmul(a, b)) < 1e-14);
  CHECK(op_grad_error([](Tape& t, const V& in) { return ops::matmul(t, in[0], in[1]); }, {a, b}) < kGradTol);
  CHECK_THROWS_AS(ops::matmul(tape, Tensor::constant(a), Tensor::constant(a)), ShapeError);
}

TEST_CASE("elementwise ops and their gradients") {
  Rng rng = rng_for(2);
  const Matrix a = oracle::random_matrix(3, 4, rng), b = oracle::random_matrix(3, 4, rng);
  CHECK(op_grad_error([](Tape& t, const V& in) { return ops::add(t, in[0], in[1]); }, {a, b}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& in) { return ops::sub(t, in[0], in[1]); }, {a, b}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& in) { return ops::mul(t, in[0], in[1]); }, {a, b}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& in) { return ops::scale(t, in[0], -2.5); }, {a}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& in) { return ops::exp(t, in[0]); }, {a}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& in) { return ops::relu(t, in[0]); }, {a}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& in) { return ops::transpose(t, in[0]); }, {a}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& in) { return ops::concat_cols(t, in[0], in[1]); }, {a, b}) <
        kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& in) { return ops::scale_by(t, in[0], in[1], 1); },
                      {a, oracle::random_matrix(3, 1, rng)}) < kGradTol);

  Tape tape;
  CHECK_THROWS_AS(ops::add(tape, Tensor::constant(a), Tensor::constant(Matrix(4, 3))), ShapeError);
  CHECK_THROWS_AS(ops::scale_by(tape, Tensor::constant(a), Tensor::constant(Matrix(2, 1)), 2), ShapeError);
}

TEST_CASE("relu has zero subgradient at zero") {
  Tape tape;
  const Tensor x = Tensor::parameter(Matrix(1, 3, std::vector<double>{-1.0, 0.0, 2.0}));
  tape.backward(ops::sum_all(tape, ops::relu(tape, x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("log_clamped stops the gradient where the floor is active") {
  Tape tape;
  const Tensor x = Tensor::parameter(Matrix(1, 2, std::vector<double>{1e-20, 0.5}));
  const Tensor y = ops::log_clamped(tape, x, 1e-12);
  CHECK(y.value()[0] == doctest::Approx(std::log(1e-12)));
  tape.backward(ops::sum_all(tape, y));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("reductions") {
  Rng rng = rng_for(3);
  const Matrix a = oracle::random_matrix(5, 7, rng), b = oracle::random_matrix(5, 7, rng);
  Tape tape;
  double s = 0, f = 0, in = 0, d = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    s += a[k];
    f += a[k] * a[k];
    in += a[k] * b[k];
    d += (a[k] - b[k]) * (a[k] - b[k]);
  }
  const Tensor ta = Tensor::constant(a), tb = Tensor::constant(b);
  CHECK(ops::sum_all(tape, ta).item() == doctest::Approx(s).epsilon(1e-13));
  CHECK(ops::frobenius_sq(tape, ta).item() == doctest::Approx(f).epsilon(1e-13));
  CHECK(ops::inner(tape, ta, tb).item() == doctest::Approx(in).epsilon(1e-13));
  CHECK(ops::squared_distance(tape, ta, tb).item() == doctest::Approx(d).epsilon(1e-13));

  CHECK(op_grad_error([](Tape& t, const V& x) { return ops::sum_all(t, x[0]); }, {a}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& x) { return ops::frobenius_sq(t, x[0]); }, {a}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& x) { return ops::inner(t, x[0], x[1]); }, {a, b}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& x) { return ops::squared_distance(t, x[0], x[1]); }, {a, b}) <
        kGradTol);
}

TEST_CASE("gather_rows accumulates gradient for repeated rows") {
  Tape tape;
  const Tensor x = Tensor::parameter(Matrix(3, 2, 1.0));
  const std::vector<std::size_t> rows{2, 0, 2};
  const Tensor g = ops::gather_rows(tape, x, rows);
  CHECK(g.rows() == 3);
  tape.backward(ops::sum_all(tape, g));
  CHECK(x.grad()(0, 0) == 1.0);
  CHECK(x.grad()(1, 0) == 0.0);
  CHECK(x.grad()(2, 1) == 2.0);
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(ops::gather_rows(tape, x, bad), ShapeError);
}

TEST_CASE("row_normalize and row_softmax") {
  Rng rng = rng_for(4);
  const Matrix pos = oracle::random_matrix(4, 5, rng, 0.1, 2.0);
  const Matrix any = oracle::random_matrix(4, 5, rng, -3.0, 3.0);
  Tape tape;
  CHECK(oracle::max_abs_diff(ops::row_normalize(tape, Tensor::constant(pos)).value(),
                             oracle::row_normalize(pos)) < 1e-15);
  CHECK(oracle::max_abs_diff(ops::row_softmax(tape, Tensor::constant(any)).value(),
                             oracle::row_softmax(any)) < 1e-15);
  CHECK(op_grad_error([](Tape& t, const V& x) { return ops::row_normalize(t, x[0]); }, {pos}) < kGradTol);
  CHECK(op_grad_error([](Tape& t, const V& x) { return ops::row_softmax(t, x[0]); }, {any}) < kGradTol);

  Matrix zero_row = pos;
  for (double& v : zero_row.row(2)) v = 0.0;
  try {
    ops::row_normalize(tape, Tensor::constant(zero_row));
    FAIL("expected DegenerateError");
  } catch (const DegenerateError& e) {
    CHECK(e.row() == 2);
  }
}

TEST_CASE("softmax survives large logits") {
  Tape tape;
  const Tensor z = ops::row_softmax(tape, Tensor::constant(Matrix(1, 2, std::vector<double>{1000.0, 0.0})));
  CHECK(z.value()[0] == 1.0);
  CHECK(std::isfinite(z.value()[1]));
}

TEST_CASE("dropout") {
  Rng rng = rng_for(5);
  const Tensor x = Tensor::constant(Matrix(50, 40, 1.0));
  Tape tape;
  CHECK(ops::dropout(tape, x, 0.5, false, rng).same_node(x));
  CHECK(ops::dropout(tape, x, 0.0, true, rng).same_node(x));
  CHECK_THROWS_AS(ops::dropout(tape, x, 1.0, true, rng), ConfigError);
  CHECK_THROWS_AS(ops::dropout(tape, x, -0.1, true, rng), ConfigError);
  const Matrix y = ops::dropout(tape, x, 0.5, true, rng).value();
  std::size_t kept = 0;
  for (double v : y.values()) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  // 2000 Bernoulli(0.5) draws: 6 sigma is about 134.
  CHECK(kept > 866);
  CHECK(kept < 1134);
}

TEST_CASE("pairwise metric matches the double loop and gets gradient at alpha = 0") {
  Rng rng = rng_for(6);
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix x = oracle::random_matrix(6, 4, rng);
    const Matrix alpha = oracle::random_matrix(4, 1, rng, -0.5, 1.0);
    Tape tape;
    const Tensor m = ops::pairwise_metric(tape, Tensor::constant(x), Tensor::constant(alpha));
    CHECK(oracle::max_abs_diff(m.value(), oracle::metric(x, alpha)) < 1e-12);
    CHECK(op_grad_error([](Tape& t, const V& in) { return ops::pairwise_metric(t, in[0], in[1]); }, {x, alpha}) <
          1e-5);
  }
  // At alpha = 0 every score sits on the ReLU kink; the right derivative applies.
  Rng r2 = rng_for(7);
  const Matrix x = oracle::random_matrix(4, 3, r2);
  Tape tape;
  const Tensor alpha = Tensor::parameter(Matrix(3, 1));
  tape.backward(ops::sum_all(tape, ops::pairwise_metric(tape, Tensor::constant(x), alpha)));
  for (std::size_t q = 0; q < 3; ++q) {
    double expect = 0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) expect += std::abs(x(i, q) - x(j, q));
    CHECK(alpha.grad()(q, 0) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("prior weighted metric and the fused learned graph") {
  Rng rng = rng_for(8);
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t n = 5 + static_cast<std::size_t>(rep);
    const Matrix x = oracle::random_matrix(n, 3, rng);
    const Matrix alpha = oracle::random_matrix(3, 1, rng, -0.5, 1.0);
    const Matrix prior = oracle::random_prior(n, rng);
    Tape tape;
    const Matrix pw = ops::prior_weighted_metric(tape, Tensor::constant(x), Tensor::constant(alpha), prior).value();
    const Matrix m = oracle::metric(x, alpha);
    double worst = 0;
    for (std::size_t k = 0; k < pw.size(); ++k) worst = std::max(worst, std::abs(pw[k] - prior[k] * m[k]));
    CHECK(worst < 1e-12);

    const Matrix lg = ops::learned_graph(tape, Tensor::constant(x), Tensor::constant(alpha), &prior).value();
    CHECK(oracle::max_abs_diff(lg, oracle::graph_learning(x, alpha, prior)) < 1e-12);
    const Matrix ones(n, n, 1.0);
    const Matrix dense = ops::learned_graph(tape, Tensor::constant(x), Tensor::constant(alpha), nullptr).value();
    CHECK(oracle::max_abs_diff(dense, oracle::graph_learning(x, alpha, ones)) < 1e-12);

    CHECK(op_grad_error(
              [&](Tape& t, const V& in) { return ops::prior_weighted_metric(t, in[0], in[1], prior); },
              {x, alpha}) < 1e-5);
    CHECK(op_grad_error([&](Tape& t, const V& in) { return ops::learned_graph(t, in[0], in[1], &prior); },
                        {x, alpha}) < 1e-5);
    CHECK(op_grad_error([&](Tape& t, const V& in) { return ops::learned_graph(t, in[0], in[1], nullptr); },
                        {x, alpha}) < 1e-5);
  }
}

TEST_CASE("learned graph rejects an asymmetric prior support") {
  Matrix prior(3, 3);
  prior(0, 0) = prior(1, 1) = prior(2, 2) = 0.5;
  prior(0, 1) = 0.5;
  prior(1, 0) = 0.5;
  prior(2, 0) = 0.5;
  Tape tape;
  CHECK_THROWS_AS(ops::learned_graph(tape, Tensor::constant(Matrix(3, 2, 1.0)), Tensor::constant(Matrix(2, 1)),
                                     &prior),
                  ShapeError);
}

TEST_CASE("learned graph reports overflowing rows as degenerate") {
  Matrix x(2, 1);
  x(1, 0) = 1000.0;
  Tape tape;
  CHECK_THROWS_AS(ops::learned_graph(tape, Tensor::constant(x), Tensor::constant(Matrix(1, 1, 10.0)), nullptr),
                  DegenerateError);
}

TEST_CASE("renormalized propagation matches the double loop") {
  Rng rng = rng_for(9);
  const Matrix a = oracle::row_normalize(oracle::random_matrix(5, 5, rng, 0.0, 1.0));
  const Matrix h = oracle::random_matrix(5, 3, rng);
  const Matrix eye = [] {
    Matrix m(3, 3);
    for (std::size_t i = 0; i < 3; ++i) m(i, i) = 1;
    return m;
  }();
  for (auto mode : {ops::DegreeFrom::kAHat, ops::DegreeFrom::kA}) {
    Tape tape;
    // The oracle applies ReLU; a positive shift of h keeps it inactive.
    Matrix shifted = h;
    for (double& v : shifted.values()) v += 10.0;
    const Matrix want = oracle::graph_conv(shifted, a, eye, mode == ops::DegreeFrom::kA);
    const Matrix got_shifted =
        ops::renormalized_propagate(tape, Tensor::constant(a), Tensor::constant(shifted), mode).value();
    CHECK(oracle::max_abs_diff(got_shifted, want) < 1e-12);
    CHECK(op_grad_error([mode](Tape& t, const V& in) { return ops::renormalized_propagate(t, in[0], in[1], mode); },
                        {a, h}) < kGradTol);
  }
  Tape tape;
  Matrix neg(2, 2, -1.0);
  CHECK_THROWS_AS(ops::renormalized_propagate(tape, Tensor::constant(neg), Tensor::constant(Matrix(2, 1)),
                                              ops::DegreeFrom::kAHat),
                  DegenerateError);
}

TEST_CASE("attention coefficients match the double loop") {
  Rng rng = rng_for(10);
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix h = oracle::random_matrix(5, 3, rng);
    const Matrix a = oracle::random_prior(5, rng);
    const Matrix gamma = oracle::random_matrix(6, 1, rng, -0.5, 1.0);
    Matrix eye(3, 3);
    for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1;
    Tape tape;
    const Matrix beta =
        ops::attention_coefficients(tape, Tensor::constant(h), Tensor::constant(a), Tensor::constant(gamma)).value();
    CHECK(oracle::max_abs_diff(beta, oracle::graph_attention(h, a, eye, gamma).beta) < 1e-12);
    CHECK(op_grad_error([](Tape& t, const V& in) { return ops::attention_coefficients(t, in[0], in[1], in[2]); },
                        {h, a, gamma}) < 1e-5);
  }
}

TEST_CASE("tape accumulates leaf gradients across sweeps and skips recording when disabled") {
  Tensor x = Tensor::parameter(Matrix(2, 2, 1.5));
  {
    Tape tape;
    tape.backward(ops::sum_all(tape, ops::scale(tape, x, 2.0)));
    tape.backward(ops::sum_all(tape, ops::scale(tape, x, 3.0)));
    CHECK(x.grad()(1, 1) == 5.0);
  }
  x.zero_grad();
  CHECK(x.grad()(0, 0) == 0.0);

  Tape off(false);
  const Tensor y = ops::matmul(off, x, x);
  CHECK(off.size() == 0);
  CHECK_FALSE(y.requires_grad());

  Tape tape;
  CHECK_THROWS_AS(tape.backward(ops::scale(tape, x, 1.0)), ShapeError);
  CHECK_THROWS_AS(x.item(), ShapeError);
}

TEST_CASE("shared subexpressions receive the sum of both paths") {
  Tape tape;
  const Tensor x = Tensor::parameter(Matrix(1, 1, 3.0));
  const Tensor y = ops::mul(tape, x, x);
  tape.backward(ops::sum_all(tape, ops::add(tape, y, x)));
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("constants never receive gradients") {
  Tape tape;
  const Tensor c = Tensor::constant(Matrix(2, 2, 1.0));
  const Tensor p = Tensor::parameter(Matrix(2, 2, 2.0));
  tape.backward(ops::inner(tape, c, p));
  CHECK_FALSE(c.requires_grad());
  CHECK(p.grad()(0, 1) == 1.0);
}
