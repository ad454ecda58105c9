#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "glssl/dataset.hpp"
#include "glssl/graph_prior.hpp"
#include "glssl/model.hpp"

namespace glssl {

enum class OptimizerKind { kAdam, kSgd };
enum class Selection { kBestVal, kFinal };

OptimizerKind parse_optimizer(std::string_view s);
std::string_view to_string(OptimizerKind o);
Selection parse_selection(std::string_view s);
std::string_view to_string(Selection s);

struct TrainConfig {
  std::size_t episodes = 200;
  double lr = 0.01;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // L2 penalty coefficient, applied to P and W0 only.
  double weight_decay = 5e-4;
  Selection select = Selection::kBestVal;
};

void validate(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Adam or plain gradient descent over a model's parameters.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const Model& model);
  // Uses the gradients currently accumulated in the parameters.
  void step(Model& model);

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
  std::vector<bool> decayed_;
};

struct EpisodeRecord {
  std::size_t episode = 0;  // 1-based
  double loss_c = 0, loss_g = 0, loss = 0;
  double val_acc = 0, test_acc = 0;
};

struct TrainReport {
  std::vector<EpisodeRecord> records;
  std::size_t best_episode = 0;
  double val_acc = 0;
  double test_acc = 0;
  double wall_seconds = 0;
};

nlohmann::json to_json(const EpisodeRecord& r);
// One JSON object per line, no wall time, so equal runs give equal bytes.
std::string report_jsonl(const TrainReport& report);
nlohmann::json summary_json(const TrainReport& report);

// Argmax accuracy over `nodes`; ties go to the lowest class. Empty `nodes` is a ConfigError.
double accuracy(const Matrix& z, std::span<const int> labels, std::span<const std::size_t> nodes);

// Inference-mode class probabilities for every node.
Matrix predict(const Model& model, const Dataset& data, const GraphPrior& prior);
// Inference-mode fused pre-softmax representation.
Matrix embed(const Model& model, const Dataset& data, const GraphPrior& prior);
double evaluate(const Model& model, const Dataset& data, const GraphPrior& prior,
                std::span<const std::size_t> nodes);

using EpisodeCallback = std::function<void(const EpisodeRecord&)>;

// Full-batch training on data.train. With best-val selection the model ends
// holding the parameters of the best validation episode (earliest on ties).
// Throws DivergenceError on a non-finite loss.
TrainReport train(Model& model, const Dataset& data, const GraphPrior& prior, const TrainConfig& cfg,
                  const EpisodeCallback& on_episode = {});

struct SeedSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<double> test_acc;
  double mean = 0;
  double stddev = 0;  // sample standard deviation, 0 for a single run
};

// Trains a fresh model for seeds seed, seed+1, ..., seed+k-1.
SeedSummary run_seeds(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const Dataset& data,
                      const GraphPrior& prior, std::size_t k);

struct GradCheckEntry {
  std::string param;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // entries next to a kink
  double max_rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  double tolerance = 0;
  bool pass = true;
};

struct GradCheckSpec {
  Variant variant = Variant::kDgl;
  std::size_t nodes = 8;
  std::size_t dim = 5;
  std::size_t classes = 3;
  std::size_t d0 = 6;
  std::size_t d1 = 4;
  bool with_edges = true;
  std::uint64_t seed = 0;
  double epsilon = 1e-5;
  double tolerance = 1e-4;
};

// Compares tape gradients of the total loss against central differences on a
// small random instance with nonzero metric and attention weights.
GradCheckReport grad_check(const GradCheckSpec& spec);
// Same comparison for an existing model and instance.
GradCheckReport grad_check(Model& model, const Dataset& data, const GraphPrior& prior, double epsilon,
                           double tolerance);

}  // namespace glssl
