#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "glssl/graph_prior.hpp"
#include "glssl/matrix.hpp"

namespace glssl {

struct Dataset {
  std::string name;
  Matrix x;             // N x D
  std::vector<int> y;   // class per node, in [0, classes)
  std::size_t classes = 0;
  std::vector<std::size_t> train, val, test;
  std::optional<std::vector<Edge>> edges;

  std::size_t n() const noexcept { return x.rows(); }
  std::size_t dim() const noexcept { return x.cols(); }
};

// Checks split disjointness, index ranges, label range and that every class
// has at least one training node. Throws IngestionError.
void validate(const Dataset& d);

// Directory layout: features.csv, labels.csv, split.json and optionally edges.tsv.
// Errors name the file and the 1-based line.
Dataset load_bundle(const std::filesystem::path& dir);
void save_bundle(const Dataset& d, const std::filesystem::path& dir);

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t per_class = 1000;
  std::size_t dim = 200;
  std::size_t labeled_per_class = 4;
  std::size_t val_per_class = 100;
  double separation = 16.0;
  std::uint64_t seed = 0;
};

// Isotropic unit-variance Gaussian blobs with class c centred at separation * e_c.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Divides each nonzero row by its L1 norm.
void row_normalize_features(Matrix& x);

enum class FeatureNorm { kAuto, kNone, kL1 };
FeatureNorm parse_feature_norm(std::string_view s);
std::string_view to_string(FeatureNorm f);
// kAuto normalizes bundles that carry an edge list (citation graphs) and leaves others alone.
void apply_feature_norm(Dataset& d, FeatureNorm f);

// Fresh class-balanced train/val/test draw of the given sizes. Throws
// ConfigError when the sizes cannot be met.
Dataset subsample_splits(const Dataset& d, std::size_t train_n, std::size_t val_n, std::size_t test_n,
                         std::uint64_t seed);

}  // namespace glssl
