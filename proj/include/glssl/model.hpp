#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "glssl/graph_prior.hpp"
#include "glssl/losses.hpp"
#include "glssl/ops.hpp"
#include "glssl/tensor.hpp"

namespace glssl {

enum class Variant { kDgl, kGlgcn, kDglNonLocal, kDglShallowMetric, kGcnBaseline };
enum class AttentionGraph { kA1, kA0 };
enum class GraphLossFeatures { kRaw, kLayer };

std::string_view to_string(Variant v);
std::string_view to_string(AttentionGraph g);
std::string_view to_string(GraphLossFeatures f);
std::string_view to_string(ops::DegreeFrom d);
Variant parse_variant(std::string_view s);
AttentionGraph parse_attention_graph(std::string_view s);
GraphLossFeatures parse_graph_loss_features(std::string_view s);
ops::DegreeFrom parse_degree_from(std::string_view s);

struct ModelConfig {
  Variant variant = Variant::kDgl;
  std::size_t d0 = 70;
  std::size_t d1 = 30;
  std::size_t classes = 0;
  losses::LossWeights loss;
  double dropout = 0.5;
  ops::DegreeFrom degree_from = ops::DegreeFrom::kAHat;
  AttentionGraph attention_graph = AttentionGraph::kA1;
  GraphLossFeatures graph_loss_features = GraphLossFeatures::kRaw;
  std::uint64_t seed = 0;
};

/// Throws ConfigError on invalid dimensions or dropout.
void validate(const ModelConfig& cfg);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ForwardOutputs {
  Tensor z;       // N x C row probabilities
  Tensor logits;  // pre-softmax fused representation
  Tensor a0, a1;  // learned graphs (unset for gcn-baseline; a1 aliases a0 for shallow-metric)
  Tensor x0, x1, x2, x3, x4;
  Tensor beta3, beta4;
};

struct LossBreakdown {
  Tensor classification;
  Tensor graph;
  Tensor total;
};

/// Trainable state of one network. Parameters are created in a fixed order so
/// a seed fully determines them.
class Model {
 public:
  struct Param {
    std::string name;
    Tensor tensor;
  };

  static Model build(const ModelConfig& cfg, std::size_t input_dim);

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  std::vector<Param>& params() noexcept { return params_; }
  std::size_t parameter_count() const;

  /// Parameter by name, or an invalid Tensor if the variant has none.
  Tensor find(std::string_view name) const;
  bool has(std::string_view name) const { return find(name).valid(); }

  void zero_grad();

  /// Full forward pass. Dropout is applied to the input of every graph
  /// convolution and attention layer when training is set.
  ForwardOutputs forward(Tape& tape, const Tensor& x, const GraphPrior& prior, bool training,
                         Rng& dropout_rng) const;

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

 private:
  ModelConfig cfg_;
  std::size_t input_dim_ = 0;
  std::vector<Param> params_;
};

/// Training objective for a fixed feature matrix. Caches X X^T for the
/// smoothness terms when they use raw features.
class Objective {
 public:
  Objective(const ModelConfig& cfg, const Matrix& features);

  LossBreakdown evaluate(Tape& tape, const ForwardOutputs& out, std::span<const int> labels,
                         std::span<const std::size_t> labeled) const;

 private:
  ModelConfig cfg_;
  std::optional<losses::SmoothnessTarget> raw_target_;
};

/// Rough peak working set in bytes of one training step on N nodes.
std::uint64_t estimate_training_bytes(const ModelConfig& cfg, std::size_t n, std::size_t d);

// Checkpoint: a text preamble (magic line, then the model configuration as JSON
// terminated by a blank line) followed by a little-endian binary body holding
// each named parameter matrix with its shape.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace glssl
