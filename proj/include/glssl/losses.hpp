#pragma once

#include <cstddef>
#include <span>

#include "glssl/tensor.hpp"

namespace glssl::losses {

struct LossWeights {
  double lambda1 = 0.1;    // Laplacian smoothness
  double lambda2 = 0.01;   // Frobenius sparsity
  double lambda3 = 0.001;  // consistency between the two learned graphs
};

inline constexpr double kLogFloor = 1e-12;

/// -sum_{k in labeled} ln max(Z[k, y_k], 1e-12). Summed, not averaged.
/// Throws ConfigError for an empty labeled set and IngestionError for a label >= C.
Tensor classification_loss(Tape& tape, const Tensor& z, std::span<const int> labels,
                           std::span<const std::size_t> labeled);

/// tr(X^T (I - A) X) for a fixed X, stored as ||X||_F^2 and the Gram matrix X X^T
/// so each evaluation costs O(N^2) instead of O(N^2 D).
struct SmoothnessTarget {
  double frobenius_sq = 0.0;
  Tensor gram;
};

SmoothnessTarget make_smoothness_target(const Matrix& x);

/// tr(X^T (I - A) X) with no gradient into X.
Tensor laplacian_term(Tape& tape, const Tensor& a, const SmoothnessTarget& target);
/// tr(X^T (I - A) X), differentiable in both A and X.
Tensor laplacian_term(Tape& tape, const Tensor& a, const Tensor& x);

/// lambda1 (lap0 + lap1) + lambda2 (||A0||_F^2 + ||A1||_F^2) + lambda3 ||A0 - A1||_F^2
Tensor graph_loss(Tape& tape, const Tensor& lap0, const Tensor& lap1, const Tensor& a0,
                  const Tensor& a1, const LossWeights& w);

/// Graph loss over raw features x (no gradient into x).
Tensor graph_loss(Tape& tape, const Tensor& x, const Tensor& a0, const Tensor& a1,
                  const LossWeights& w);

/// Single-graph form: lambda1 lap0 + lambda2 ||A0||_F^2.
Tensor single_graph_loss(Tape& tape, const Tensor& lap0, const Tensor& a0, const LossWeights& w);

Tensor total_loss(Tape& tape, const Tensor& lc, const Tensor& lg);

}  // namespace glssl::losses
