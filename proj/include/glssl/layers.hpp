#pragma once

#include "glssl/graph_prior.hpp"
#include "glssl/ops.hpp"
#include "glssl/tensor.hpp"

namespace glssl::layers {

/// X * P. No bias, no activation.
Tensor linear_projection(Tape& tape, const Tensor& x, const Tensor& p);

/// Learned row-stochastic graph:
///   A(i,j) = prior(i,j) * M(i,j) / sum_k prior(i,k) * M(i,k),  M = pairwise_metric(x, alpha).
/// In ones mode the constant prior cancels and is never materialized.
Tensor graph_learning(Tape& tape, const Tensor& x, const Tensor& alpha, const GraphPrior& prior);

/// ReLU(D^-1/2 (I + A) D^-1/2 X W).
Tensor graph_conv(Tape& tape, const Tensor& x, const Tensor& a, const Tensor& w,
                  ops::DegreeFrom degree = ops::DegreeFrom::kAHat);

struct AttentionOutput {
  Tensor out;   // ReLU(beta X W)
  Tensor beta;  // row-stochastic attention coefficients, support within a
};

AttentionOutput graph_attention(Tape& tape, const Tensor& x, const Tensor& a, const Tensor& w,
                                const Tensor& gamma);

/// eta_1 X2 + eta_2 X3 + eta_3 X4 (pre-softmax fused representation).
Tensor fusion_logits(Tape& tape, const Tensor& x2, const Tensor& x3, const Tensor& x4,
                     const Tensor& eta);

/// Row softmax of fusion_logits.
Tensor fusion(Tape& tape, const Tensor& x2, const Tensor& x3, const Tensor& x4, const Tensor& eta);

}  // namespace glssl::layers
