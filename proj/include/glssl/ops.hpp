#pragma once

// Differentiable primitives over dense 2-D tensors.
//
// Every op validates shapes (ShapeError naming both operands), computes its
// value eagerly and, when an input requires grad and the tape is recording,
// appends a backward rule to the tape.

#include <cstdint>
#include <span>

#include "glssl/random.hpp"
#include "glssl/tensor.hpp"

namespace glssl::ops {

using glssl::Rng;

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);

// Subgradient at 0 is 0.
Tensor relu(Tape& tape, const Tensor& a);
Tensor exp(Tape& tape, const Tensor& a);
// ln(max(a, floor)); zero gradient where the clamp is active.
Tensor log_clamped(Tape& tape, const Tensor& a, double floor);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
// s[index] * a, differentiable in both a and the scalar entry of s.
Tensor scale_by(Tape& tape, const Tensor& a, const Tensor& s, std::size_t index);

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);
Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::size_t> rows);

Tensor sum_all(Tape& tape, const Tensor& a);
Tensor frobenius_sq(Tape& tape, const Tensor& a);
// sum_ij a_ij * b_ij as a 1x1 tensor.
Tensor inner(Tape& tape, const Tensor& a, const Tensor& b);
// ||a - b||_F^2 without materializing the difference.
Tensor squared_distance(Tape& tape, const Tensor& a, const Tensor& b);

// Each row divided by its sum. Throws DegenerateError for a row whose sum is not positive.
Tensor row_normalize(Tape& tape, const Tensor& m);
// Row-wise softmax with max subtraction.
Tensor row_softmax(Tape& tape, const Tensor& m);

// Inverted dropout: zeroes entries with probability p and scales survivors by
// 1/(1-p) when training; identity otherwise. p outside [0,1) is a ConfigError.
Tensor dropout(Tape& tape, const Tensor& a, double p, bool training, Rng& rng);

// M(i,j) = exp(ReLU(sum_d alpha_d |x_id - x_jd|)) for x [N x D], alpha [D x 1].
// |.| has subgradient 0 at 0. The ReLU takes its right derivative (1) at exactly
// 0 so that a zero alpha still receives gradient.
Tensor pairwise_metric(Tape& tape, const Tensor& x, const Tensor& alpha);

// prior(i,j) * M(i,j), evaluating the metric only where prior(i,j) != 0.
// The prior is a constant.
Tensor prior_weighted_metric(Tape& tape, const Tensor& x, const Tensor& alpha,
                             const Matrix& prior);

// Row-normalized metric graph in one op: row_normalize(pairwise_metric(x, alpha))
// when prior is null, row_normalize(prior_weighted_metric(x, alpha, *prior))
// otherwise. Throws DegenerateError for a row that sums to zero or overflows.
Tensor learned_graph(Tape& tape, const Tensor& x, const Tensor& alpha, const Matrix* prior);

enum class DegreeFrom { kAHat, kA };

// D^-1/2 (I + a) D^-1/2 h, where D is the diagonal of row sums of (I + a)
// (kAHat) or of a (kA). Throws DegenerateError when a degree is not positive.
Tensor renormalized_propagate(Tape& tape, const Tensor& a, const Tensor& h, DegreeFrom degree);

// Masked attention over h [N x C] with weights a [N x N] and gamma [2C x 1]:
//   beta_hat(i,j) = exp(ReLU(gamma^T [h_i || h_j])) * a(i,j),  beta = row-normalized beta_hat.
// Same ReLU convention as pairwise_metric.
Tensor attention_coefficients(Tape& tape, const Tensor& h, const Tensor& a, const Tensor& gamma);

}  // namespace glssl::ops
