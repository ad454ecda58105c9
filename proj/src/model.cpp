#include "glssl/model.hpp"

#include <algorithm>
#include <cmath>

#include "glssl/errors.hpp"
#include "glssl/layers.hpp"
#include "glssl/random.hpp"

namespace glssl {
namespace {

struct VariantParts {
  bool first_metric;
  bool second_metric;
  bool attention;
};

VariantParts parts(Variant v) {
  switch (v) {
    case Variant::kDgl: return {true, true, true};
    case Variant::kDglNonLocal: return {true, true, false};
    case Variant::kDglShallowMetric: return {true, false, true};
    case Variant::kGlgcn: return {true, false, false};
    case Variant::kGcnBaseline: return {false, false, false};
  }
  return {true, true, true};
}

Matrix glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (double& v : m.values()) v = uniform(rng, -limit, limit);
  return m;
}

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<std::string_view, E> (&table)[N],
             const char* what) {
  for (const auto& [name, value] : table)
    if (name == s) return value;
  std::string options;
  for (const auto& [name, value] : table) options += (options.empty() ? "" : ", ") + std::string(name);
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(s) + "' (expected one of " +
                    options + ")");
}

constexpr std::pair<std::string_view, Variant> kVariants[] = {
    {"dgl", Variant::kDgl},
    {"glgcn", Variant::kGlgcn},
    {"dgl-non-local", Variant::kDglNonLocal},
    {"dgl-shallow-metric", Variant::kDglShallowMetric},
    {"gcn-baseline", Variant::kGcnBaseline}};
constexpr std::pair<std::string_view, AttentionGraph> kAttentionGraphs[] = {
    {"a1", AttentionGraph::kA1}, {"a0", AttentionGraph::kA0}};
constexpr std::pair<std::string_view, GraphLossFeatures> kLossFeatures[] = {
    {"raw", GraphLossFeatures::kRaw}, {"layer", GraphLossFeatures::kLayer}};
constexpr std::pair<std::string_view, ops::DegreeFrom> kDegrees[] = {
    {"a_hat", ops::DegreeFrom::kAHat}, {"a_l", ops::DegreeFrom::kA}};

template <typename E, std::size_t N>
std::string_view name_of(E value, const std::pair<std::string_view, E> (&table)[N]) {
  for (const auto& [name, v] : table)
    if (v == value) return name;
  return "?";
}

}  // namespace

std::string_view to_string(Variant v) { return name_of(v, kVariants); }
std::string_view to_string(AttentionGraph g) { return name_of(g, kAttentionGraphs); }
std::string_view to_string(GraphLossFeatures f) { return name_of(f, kLossFeatures); }
std::string_view to_string(ops::DegreeFrom d) { return name_of(d, kDegrees); }
Variant parse_variant(std::string_view s) { return parse_enum(s, kVariants, "variant"); }
AttentionGraph parse_attention_graph(std::string_view s) {
  return parse_enum(s, kAttentionGraphs, "attention graph");
}
GraphLossFeatures parse_graph_loss_features(std::string_view s) {
  return parse_enum(s, kLossFeatures, "graph loss features");
}
ops::DegreeFrom parse_degree_from(std::string_view s) { return parse_enum(s, kDegrees, "degree source"); }

void validate(const ModelConfig& cfg) {
  if (cfg.d0 < 1 || cfg.d1 < 1 || cfg.classes < 1) {
    throw ConfigError("d0, d1 and the class count must all be at least 1");
  }
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) {
    throw ConfigError("dropout must lie in [0,1), got " + std::to_string(cfg.dropout));
  }
  if (cfg.loss.lambda1 < 0.0 || cfg.loss.lambda2 < 0.0 || cfg.loss.lambda3 < 0.0) {
    throw ConfigError("loss weights must be nonnegative");
  }
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"variant", to_string(cfg.variant)},
          {"d0", cfg.d0},
          {"d1", cfg.d1},
          {"classes", cfg.classes},
          {"lambda1", cfg.loss.lambda1},
          {"lambda2", cfg.loss.lambda2},
          {"lambda3", cfg.loss.lambda3},
          {"dropout", cfg.dropout},
          {"degree_from", to_string(cfg.degree_from)},
          {"attention_graph", to_string(cfg.attention_graph)},
          {"graph_loss_features", to_string(cfg.graph_loss_features)},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig cfg;
    cfg.variant = parse_variant(j.at("variant").get<std::string>());
    cfg.d0 = j.at("d0").get<std::size_t>();
    cfg.d1 = j.at("d1").get<std::size_t>();
    cfg.classes = j.at("classes").get<std::size_t>();
    cfg.loss.lambda1 = j.at("lambda1").get<double>();
    cfg.loss.lambda2 = j.at("lambda2").get<double>();
    cfg.loss.lambda3 = j.at("lambda3").get<double>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.degree_from = parse_degree_from(j.at("degree_from").get<std::string>());
    cfg.attention_graph = parse_attention_graph(j.at("attention_graph").get<std::string>());
    cfg.graph_loss_features = parse_graph_loss_features(j.at("graph_loss_features").get<std::string>());
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model configuration: ") + e.what());
  }
}

Model Model::build(const ModelConfig& cfg, std::size_t input_dim) {
  validate(cfg);
  if (input_dim < 1) throw ConfigError("input feature dimension must be at least 1");
  Model m;
  m.cfg_ = cfg;
  m.input_dim_ = input_dim;
  Rng rng = make_rng(cfg.seed, 1);
  const auto p = parts(cfg.variant);
  const std::size_t c = cfg.classes;
  auto add = [&m](std::string name, Matrix value) {
    m.params_.push_back({name, Tensor::parameter(std::move(value), name)});
  };
  add("P", glorot(input_dim, cfg.d0, rng));
  if (p.first_metric) add("alpha0", Matrix(cfg.d0, 1));
  add("W0", glorot(cfg.d0, cfg.d1, rng));
  if (p.second_metric) add("alpha1", Matrix(cfg.d1, 1));
  add("W1", glorot(cfg.d1, c, rng));
  if (p.attention) {
    add("W3", glorot(c, c, rng));
    add("gamma3", Matrix(2 * c, 1));
    add("W4", glorot(c, c, rng));
    add("gamma4", Matrix(2 * c, 1));
    add("eta", Matrix(3, 1, 1.0 / 3.0));
  }
  return m;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.value().size();
  return n;
}

Tensor Model::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  return {};
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

ForwardOutputs Model::forward(Tape& tape, const Tensor& x, const GraphPrior& prior, bool training,
                              Rng& dropout_rng) const {
  if (x.cols() != input_dim_) {
    throw ShapeError("model expects " + std::to_string(input_dim_) + " input features, got " +
                     x.value().shape_string());
  }
  if (prior.n() != x.rows()) {
    throw ShapeError("prior has " + std::to_string(prior.n()) + " nodes, features have " +
                     std::to_string(x.rows()));
  }
  const double p = cfg_.dropout;
  auto drop = [&](const Tensor& t) { return ops::dropout(tape, t, p, training, dropout_rng); };
  const auto deg = cfg_.degree_from;

  ForwardOutputs out;
  out.x0 = layers::linear_projection(tape, x, find("P"));

  if (cfg_.variant == Variant::kGcnBaseline) {
    // Fixed Kipf propagation over the binary prior; no graph learning.
    const Tensor adj = Tensor::constant(prior.binary_adjacency());
    out.x1 = layers::graph_conv(tape, drop(out.x0), adj, find("W0"), ops::DegreeFrom::kAHat);
    out.x2 = layers::graph_conv(tape, drop(out.x1), adj, find("W1"), ops::DegreeFrom::kAHat);
    out.logits = out.x2;
    out.z = ops::row_softmax(tape, out.logits);
    return out;
  }

  out.a0 = layers::graph_learning(tape, out.x0, find("alpha0"), prior);
  out.x1 = layers::graph_conv(tape, drop(out.x0), out.a0, find("W0"), deg);
  if (cfg_.variant == Variant::kGlgcn) {
    out.x2 = layers::graph_conv(tape, drop(out.x1), out.a0, find("W1"), deg);
    out.logits = out.x2;
    out.z = ops::row_softmax(tape, out.logits);
    return out;
  }

  out.a1 = parts(cfg_.variant).second_metric
               ? layers::graph_learning(tape, out.x1, find("alpha1"), prior)
               : out.a0;
  out.x2 = layers::graph_conv(tape, drop(out.x1), out.a1, find("W1"), deg);
  if (cfg_.variant == Variant::kDglNonLocal) {
    out.logits = out.x2;
    out.z = ops::row_softmax(tape, out.logits);
    return out;
  }

  const Tensor& first_graph = cfg_.attention_graph == AttentionGraph::kA1 ? out.a1 : out.a0;
  auto att3 = layers::graph_attention(tape, drop(out.x2), first_graph, find("W3"), find("gamma3"));
  out.x3 = att3.out;
  out.beta3 = att3.beta;
  auto att4 = layers::graph_attention(tape, drop(out.x3), out.a1, find("W4"), find("gamma4"));
  out.x4 = att4.out;
  out.beta4 = att4.beta;
  out.logits = layers::fusion_logits(tape, out.x2, out.x3, out.x4, find("eta"));
  out.z = ops::row_softmax(tape, out.logits);
  return out;
}

std::vector<Matrix> Model::snapshot() const {
  std::vector<Matrix> values;
  values.reserve(params_.size());
  for (const auto& p : params_) values.push_back(p.tensor.value());
  return values;
}

void Model::restore(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) throw ConfigError("snapshot does not match the model");
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!values[k].same_shape(params_[k].tensor.value())) {
      throw ShapeError("snapshot entry " + params_[k].name + " has shape " +
                       values[k].shape_string());
    }
    params_[k].tensor.mutable_value() = values[k];
  }
}

Objective::Objective(const ModelConfig& cfg, const Matrix& features) : cfg_(cfg) {
  const bool needs_graph_loss = cfg.variant != Variant::kGcnBaseline;
  if (needs_graph_loss && cfg.graph_loss_features == GraphLossFeatures::kRaw && cfg.loss.lambda1 != 0.0) {
    raw_target_ = losses::make_smoothness_target(features);
  }
}

LossBreakdown Objective::evaluate(Tape& tape, const ForwardOutputs& out, std::span<const int> labels,
                                  std::span<const std::size_t> labeled) const {
  LossBreakdown b;
  b.classification = losses::classification_loss(tape, out.z, labels, labeled);
  if (cfg_.variant == Variant::kGcnBaseline) {
    b.graph = Tensor::constant(Matrix(1, 1));
    b.total = b.classification;
    return b;
  }
  auto lap = [&](const Tensor& a, const Tensor& layer_features) -> Tensor {
    if (cfg_.loss.lambda1 == 0.0) return Tensor::constant(Matrix(1, 1));
    if (raw_target_) return losses::laplacian_term(tape, a, *raw_target_);
    return losses::laplacian_term(tape, a, layer_features);
  };
  if (cfg_.variant == Variant::kGlgcn) {
    b.graph = losses::single_graph_loss(tape, lap(out.a0, out.x0), out.a0, cfg_.loss);
  } else {
    // With the second metric layer removed, A1 is A0 and was learned from X0.
    const Tensor& x_for_a1 = out.a1.same_node(out.a0) ? out.x0 : out.x1;
    b.graph = losses::graph_loss(tape, lap(out.a0, out.x0), lap(out.a1, x_for_a1), out.a0, out.a1,
                                 cfg_.loss);
  }
  b.total = losses::total_loss(tape, b.classification, b.graph);
  return b;
}

std::uint64_t estimate_training_bytes(const ModelConfig& cfg, std::size_t n, std::size_t d) {
  // Dense N x N buffers alive at the peak of backward (values, gradients and
  // kernel temporaries), measured per variant; plus the cached prior.
  double dense = 0;
  switch (cfg.variant) {
    case Variant::kDgl: dense = 16; break;
    case Variant::kDglShallowMetric: dense = 13; break;
    case Variant::kDglNonLocal: dense = 11; break;
    case Variant::kGlgcn: dense = 7; break;
    case Variant::kGcnBaseline: dense = 3; break;
  }
  dense += 1;
  const double nn = static_cast<double>(n) * static_cast<double>(n) * 8.0;
  const double feat = static_cast<double>(n) * static_cast<double>(d) * 8.0 * 4.0;
  return static_cast<std::uint64_t>(dense * nn + feat);
}

}  // namespace glssl
