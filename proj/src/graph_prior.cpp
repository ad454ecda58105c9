#include "glssl/graph_prior.hpp"

#include <algorithm>
#include <mutex>
#include <string>

#include "glssl/errors.hpp"

namespace glssl {

struct GraphPrior::Cache {
  std::once_flag once;
  Matrix normalized;
};

GraphPrior build_prior(std::size_t n, const std::optional<std::vector<Edge>>& edges) {
  GraphPrior p;
  p.n_ = n;
  p.cache_ = std::make_shared<GraphPrior::Cache>();
  if (!edges) {
    p.mode_ = GraphPrior::Mode::kOnes;
    return p;
  }
  p.mode_ = GraphPrior::Mode::kEdges;
  std::vector<Edge> canon;
  canon.reserve(edges->size());
  for (std::size_t k = 0; k < edges->size(); ++k) {
    const auto [i, j] = (*edges)[k];
    if (i >= n || j >= n) {
      throw IngestionError("edge " + std::to_string(k) + " (" + std::to_string(i) + ", " +
                           std::to_string(j) + ") has an index outside [0, " + std::to_string(n) +
                           ")");
    }
    if (i == j) continue;
    canon.emplace_back(std::min(i, j), std::max(i, j));
  }
  std::sort(canon.begin(), canon.end());
  canon.erase(std::unique(canon.begin(), canon.end()), canon.end());
  p.edges_ = std::move(canon);

  p.neighbours_.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) p.neighbours_[i].push_back(i);
  for (const auto& [i, j] : p.edges_) {
    p.neighbours_[i].push_back(j);
    p.neighbours_[j].push_back(i);
  }
  for (auto& nb : p.neighbours_) std::sort(nb.begin(), nb.end());
  return p;
}

const Matrix& GraphPrior::normalized() const {
  std::call_once(cache_->once, [this] {
    Matrix m(n_, n_);
    if (mode_ == Mode::kOnes) {
      m.fill(1.0 / static_cast<double>(n_));
    } else {
      for (std::size_t i = 0; i < n_; ++i) {
        const double w = 1.0 / static_cast<double>(neighbours_[i].size());
        for (std::size_t j : neighbours_[i]) m(i, j) = w;
      }
    }
    cache_->normalized = std::move(m);
  });
  return cache_->normalized;
}

Matrix GraphPrior::binary_adjacency() const {
  Matrix m(n_, n_);
  if (mode_ == Mode::kOnes) {
    m.fill(1.0);
    for (std::size_t i = 0; i < n_; ++i) m(i, i) = 0.0;
  } else {
    for (const auto& [i, j] : edges_) {
      m(i, j) = 1.0;
      m(j, i) = 1.0;
    }
  }
  return m;
}

bool GraphPrior::in_support(std::size_t i, std::size_t j) const {
  if (mode_ == Mode::kOnes) return i < n_ && j < n_;
  const auto& nb = neighbours_.at(i);
  return std::binary_search(nb.begin(), nb.end(), j);
}

}  // namespace glssl
