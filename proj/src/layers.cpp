#include "glssl/layers.hpp"

#include <string>

#include "glssl/errors.hpp"

namespace glssl::layers {

Tensor linear_projection(Tape& tape, const Tensor& x, const Tensor& p) {
  return ops::matmul(tape, x, p);
}

Tensor graph_learning(Tape& tape, const Tensor& x, const Tensor& alpha, const GraphPrior& prior) {
  if (prior.n() != x.rows()) {
    throw ShapeError("graph_learning: prior has " + std::to_string(prior.n()) +
                     " nodes, features have " + std::to_string(x.rows()));
  }
  return ops::learned_graph(tape, x, alpha, prior.has_edges() ? &prior.normalized() : nullptr);
}

Tensor graph_conv(Tape& tape, const Tensor& x, const Tensor& a, const Tensor& w,
                  ops::DegreeFrom degree) {
  return ops::relu(tape, ops::renormalized_propagate(tape, a, ops::matmul(tape, x, w), degree));
}

AttentionOutput graph_attention(Tape& tape, const Tensor& x, const Tensor& a, const Tensor& w,
                                const Tensor& gamma) {
  const Tensor h = ops::matmul(tape, x, w);
  Tensor beta = ops::attention_coefficients(tape, h, a, gamma);
  Tensor out = ops::relu(tape, ops::matmul(tape, beta, h));
  return {std::move(out), std::move(beta)};
}

Tensor fusion_logits(Tape& tape, const Tensor& x2, const Tensor& x3, const Tensor& x4,
                     const Tensor& eta) {
  if (eta.value().size() != 3) {
    throw ShapeError("fusion: eta must have 3 entries, got " + eta.value().shape_string());
  }
  const Tensor a = ops::scale_by(tape, x2, eta, 0);
  const Tensor b = ops::scale_by(tape, x3, eta, 1);
  const Tensor c = ops::scale_by(tape, x4, eta, 2);
  return ops::add(tape, ops::add(tape, a, b), c);
}

Tensor fusion(Tape& tape, const Tensor& x2, const Tensor& x3, const Tensor& x4, const Tensor& eta) {
  return ops::row_softmax(tape, fusion_logits(tape, x2, x3, x4, eta));
}

}  // namespace glssl::layers
