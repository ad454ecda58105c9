#include "glssl/losses.hpp"

#include <string>

#include "glssl/errors.hpp"
#include "glssl/kernels.hpp"
#include "glssl/ops.hpp"

namespace glssl::losses {

Tensor classification_loss(Tape& tape, const Tensor& z, std::span<const int> labels,
                           std::span<const std::size_t> labeled) {
  if (labeled.empty()) throw ConfigError("classification loss needs a nonempty labeled set");
  if (labels.size() != z.rows()) {
    throw ShapeError("classification loss: " + std::to_string(labels.size()) + " labels for " +
                     z.value().shape_string() + " predictions");
  }
  const std::size_t c = z.cols();
  Matrix onehot(labeled.size(), c);
  for (std::size_t r = 0; r < labeled.size(); ++r) {
    const std::size_t node = labeled[r];
    if (node >= labels.size()) {
      throw ConfigError("labeled index " + std::to_string(node) + " outside [0, " +
                        std::to_string(labels.size()) + ")");
    }
    const int y = labels[node];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw IngestionError("label " + std::to_string(y) + " of node " + std::to_string(node) +
                           " is outside [0, " + std::to_string(c) + ")");
    }
    onehot(r, static_cast<std::size_t>(y)) = 1.0;
  }
  const Tensor picked = ops::log_clamped(tape, ops::gather_rows(tape, z, labeled), kLogFloor);
  return ops::scale(tape, ops::inner(tape, picked, Tensor::constant(std::move(onehot))), -1.0);
}

SmoothnessTarget make_smoothness_target(const Matrix& x) {
  SmoothnessTarget t;
  for (double v : x.values()) t.frobenius_sq += v * v;
  Matrix gram(x.rows(), x.rows());
  kernels::active().gemm_nt(x.data(), x.data(), gram.data(), x.rows(), x.cols(), x.rows(), false);
  t.gram = Tensor::constant(std::move(gram));
  return t;
}

Tensor laplacian_term(Tape& tape, const Tensor& a, const SmoothnessTarget& target) {
  if (!a.value().same_shape(target.gram.value())) {
    throw ShapeError("laplacian term: graph " + a.value().shape_string() + " vs features for " +
                     target.gram.value().shape_string());
  }
  return ops::sub(tape, Tensor::constant(Matrix(1, 1, target.frobenius_sq)),
                  ops::inner(tape, a, target.gram));
}

Tensor laplacian_term(Tape& tape, const Tensor& a, const Tensor& x) {
  return ops::sub(tape, ops::frobenius_sq(tape, x), ops::inner(tape, x, ops::matmul(tape, a, x)));
}

Tensor graph_loss(Tape& tape, const Tensor& lap0, const Tensor& lap1, const Tensor& a0,
                  const Tensor& a1, const LossWeights& w) {
  if (!a0.value().same_shape(a1.value())) {
    throw ShapeError("graph loss: " + a0.value().shape_string() + " vs " + a1.value().shape_string());
  }
  const Tensor smooth = ops::scale(tape, ops::add(tape, lap0, lap1), w.lambda1);
  const Tensor sparse = ops::scale(
      tape, ops::add(tape, ops::frobenius_sq(tape, a0), ops::frobenius_sq(tape, a1)), w.lambda2);
  const Tensor consistent =
      ops::scale(tape, ops::squared_distance(tape, a0, a1), w.lambda3);
  return ops::add(tape, ops::add(tape, smooth, sparse), consistent);
}

Tensor graph_loss(Tape& tape, const Tensor& x, const Tensor& a0, const Tensor& a1,
                  const LossWeights& w) {
  const SmoothnessTarget target = make_smoothness_target(x.value());
  return graph_loss(tape, laplacian_term(tape, a0, target), laplacian_term(tape, a1, target), a0,
                    a1, w);
}

Tensor single_graph_loss(Tape& tape, const Tensor& lap0, const Tensor& a0, const LossWeights& w) {
  return ops::add(tape, ops::scale(tape, lap0, w.lambda1),
                  ops::scale(tape, ops::frobenius_sq(tape, a0), w.lambda2));
}

Tensor total_loss(Tape& tape, const Tensor& lc, const Tensor& lg) { return ops::add(tape, lc, lg); }

}  // namespace glssl::losses
