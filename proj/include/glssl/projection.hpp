#pragma once

#include <array>
#include <filesystem>

#include "glssl/dataset.hpp"
#include "glssl/matrix.hpp"

namespace glssl {

struct Projection {
  Matrix coords;                  // N x 2, centred data times the components
  Matrix components;              // D x 2, orthonormal columns
  std::vector<double> mean;       // per input column
  std::array<double, 2> variance{};  // eigenvalues of the covariance, descending
};

// Top two principal directions of the rows of x: subspace iteration on the
// covariance with a block of up to 8 vectors. Stops once both leading Ritz
// residuals ||C v - lambda v|| fall to tol * max(1, ||C||_F).
// Components are sign-fixed so their largest-magnitude entry is positive.
Projection project_2d(const Matrix& x, double tol = 1e-9, std::size_t max_iter = 10000);

// Columns x,y,label,split in node order. Nodes outside every split get "none".
void write_projection_csv(const std::filesystem::path& path, const Projection& p, const Dataset& d);

}  // namespace glssl
