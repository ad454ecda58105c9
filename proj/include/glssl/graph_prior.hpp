#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "glssl/matrix.hpp"

namespace glssl {

using Edge = std::pair<std::size_t, std::size_t>;

/// Initial adjacency used as the mask of the graph-learning layers.
///
/// In edge mode the input edges are symmetrized, self-loops are added, the
/// result is binarized and then row-normalized. Without edges the prior is the
/// all-ones matrix, which normalizes to the constant 1/N.
class GraphPrior {
 public:
  enum class Mode { kEdges, kOnes };

  GraphPrior() = default;

  std::size_t n() const noexcept { return n_; }
  Mode mode() const noexcept { return mode_; }
  bool has_edges() const noexcept { return mode_ == Mode::kEdges; }

  /// Canonical undirected edges: i < j, sorted, unique, self-loops dropped.
  const std::vector<Edge>& edges() const noexcept { return edges_; }

  /// Row-stochastic dense prior, built on first use and cached.
  const Matrix& normalized() const;

  /// Symmetric 0/1 adjacency without self-loops (complete graph in ones mode).
  Matrix binary_adjacency() const;

  /// Whether (i, j) lies in the support of the normalized prior.
  bool in_support(std::size_t i, std::size_t j) const;

  friend GraphPrior build_prior(std::size_t n, const std::optional<std::vector<Edge>>& edges);

 private:
  struct Cache;

  std::size_t n_ = 0;
  Mode mode_ = Mode::kOnes;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> neighbours_;  // sorted, includes self
  std::shared_ptr<Cache> cache_;
};

/// Throws IngestionError naming the offending edge when an index is outside [0, n).
GraphPrior build_prior(std::size_t n, const std::optional<std::vector<Edge>>& edges);

}  // namespace glssl
