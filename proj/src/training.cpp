#include "glssl/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>

#include "glssl/errors.hpp"
#include "glssl/random.hpp"

namespace glssl {
namespace {

bool is_decayed(std::string_view name) { return name == "P" || name == "W0"; }

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

ForwardOutputs inference(const Model& model, const Dataset& data, const GraphPrior& prior) {
  Tape tape(false);
  Rng unused = make_rng(0, 0);
  return model.forward(tape, Tensor::constant(data.x), prior, false, unused);
}

}  // namespace

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected adam or sgd)");
}

std::string_view to_string(OptimizerKind o) { return o == OptimizerKind::kAdam ? "adam" : "sgd"; }

Selection parse_selection(std::string_view s) {
  if (s == "best_val") return Selection::kBestVal;
  if (s == "final") return Selection::kFinal;
  throw ConfigError("unknown selection '" + std::string(s) + "' (expected best_val or final)");
}

std::string_view to_string(Selection s) { return s == Selection::kBestVal ? "best_val" : "final"; }

void validate(const TrainConfig& cfg) {
  if (cfg.episodes < 1) throw ConfigError("episodes must be at least 1");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0,1)");
  }
  if (!(cfg.epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"episodes", cfg.episodes},
          {"lr", cfg.lr},
          {"optimizer", to_string(cfg.optimizer)},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"epsilon", cfg.epsilon},
          {"weight_decay", cfg.weight_decay},
          {"select", to_string(cfg.select)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig cfg;
    cfg.episodes = j.at("episodes").get<std::size_t>();
    cfg.lr = j.at("lr").get<double>();
    cfg.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    cfg.beta1 = j.at("beta1").get<double>();
    cfg.beta2 = j.at("beta2").get<double>();
    cfg.epsilon = j.at("epsilon").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.select = parse_selection(j.at("select").get<std::string>());
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training configuration: ") + e.what());
  }
}

Optimizer::Optimizer(const TrainConfig& cfg, const Model& model) : cfg_(cfg) {
  for (const auto& p : model.params()) {
    const Matrix& v = p.tensor.value();
    m_.emplace_back(v.rows(), v.cols());
    v_.emplace_back(v.rows(), v.cols());
    decayed_.push_back(is_decayed(p.name));
  }
}

void Optimizer::step(Model& model) {
  auto& params = model.params();
  if (params.size() != m_.size()) throw ConfigError("optimizer was built for a different model");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k].tensor;
    if (!p.requires_grad()) continue;
    Matrix& w = p.mutable_value();
    const Matrix& g = p.grad();
    const double decay = decayed_[k] ? cfg_.weight_decay : 0.0;
    for (std::size_t e = 0; e < w.size(); ++e) {
      const double grad = g[e] + decay * w[e];
      if (cfg_.optimizer == OptimizerKind::kSgd) {
        w[e] -= cfg_.lr * grad;
        continue;
      }
      double& m = m_[k][e];
      double& v = v_[k][e];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad * grad;
      w[e] -= cfg_.lr * (m / c1) / (std::sqrt(v / c2) + cfg_.epsilon);
    }
  }
}

nlohmann::json to_json(const EpisodeRecord& r) {
  return {{"episode", r.episode}, {"loss_c", r.loss_c}, {"loss_g", r.loss_g},
          {"loss", r.loss},       {"val_acc", r.val_acc}, {"test_acc", r.test_acc}};
}

std::string report_jsonl(const TrainReport& report) {
  std::string out;
  for (const auto& r : report.records) {
    // Written by hand so every double keeps its shortest round-trip form.
    out += "{\"episode\":" + std::to_string(r.episode) + ",\"loss_c\":" + format_double(r.loss_c) +
           ",\"loss_g\":" + format_double(r.loss_g) + ",\"loss\":" + format_double(r.loss) +
           ",\"val_acc\":" + format_double(r.val_acc) + ",\"test_acc\":" + format_double(r.test_acc) + "}\n";
  }
  return out;
}

nlohmann::json summary_json(const TrainReport& report) {
  return {{"best_episode", report.best_episode},
          {"val_acc", report.val_acc},
          {"test_acc", report.test_acc},
          {"episodes", report.records.size()},
          {"wall_seconds", report.wall_seconds}};
}

double accuracy(const Matrix& z, std::span<const int> labels, std::span<const std::size_t> nodes) {
  if (nodes.empty()) throw ConfigError("cannot evaluate accuracy on an empty split");
  std::size_t correct = 0;
  for (std::size_t i : nodes) {
    if (i >= z.rows() || i >= labels.size()) throw ConfigError("split index " + std::to_string(i) + " out of range");
    const auto row = z.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

Matrix predict(const Model& model, const Dataset& data, const GraphPrior& prior) {
  return inference(model, data, prior).z.value();
}

Matrix embed(const Model& model, const Dataset& data, const GraphPrior& prior) {
  return inference(model, data, prior).logits.value();
}

double evaluate(const Model& model, const Dataset& data, const GraphPrior& prior,
                std::span<const std::size_t> nodes) {
  if (nodes.empty()) throw ConfigError("cannot evaluate accuracy on an empty split");
  return accuracy(predict(model, data, prior), data.y, nodes);
}

TrainReport train(Model& model, const Dataset& data, const GraphPrior& prior, const TrainConfig& cfg,
                  const EpisodeCallback& on_episode) {
  validate(cfg);
  if (data.val.empty() || data.test.empty()) throw ConfigError("training needs nonempty val and test splits");
  if (model.config().classes != data.classes) {
    throw ConfigError("model has " + std::to_string(model.config().classes) + " classes, data has " +
                      std::to_string(data.classes));
  }
  const auto start = std::chrono::steady_clock::now();
  const Objective objective(model.config(), data.x);
  const Tensor x = Tensor::constant(data.x);
  Optimizer opt(cfg, model);
  Rng dropout_rng = make_rng(model.config().seed, 2);

  TrainReport report;
  std::vector<Matrix> best;
  double best_val = -1.0;
  for (std::size_t ep = 1; ep <= cfg.episodes; ++ep) {
    EpisodeRecord rec;
    rec.episode = ep;
    {
      Tape tape;
      const ForwardOutputs out = model.forward(tape, x, prior, true, dropout_rng);
      const LossBreakdown loss = objective.evaluate(tape, out, data.y, data.train);
      rec.loss_c = loss.classification.item();
      rec.loss_g = loss.graph.item();
      rec.loss = loss.total.item();
      if (!std::isfinite(rec.loss)) {
        throw DivergenceError("non-finite loss " + format_double(rec.loss), static_cast<int>(ep));
      }
      model.zero_grad();
      tape.backward(loss.total);
    }
    opt.step(model);

    const Matrix z = predict(model, data, prior);
    rec.val_acc = accuracy(z, data.y, data.val);
    rec.test_acc = accuracy(z, data.y, data.test);
    report.records.push_back(rec);
    if (on_episode) on_episode(rec);

    if (cfg.select == Selection::kBestVal && rec.val_acc > best_val) {
      best_val = rec.val_acc;
      report.best_episode = ep;
      best = model.snapshot();
    }
  }
  if (cfg.select == Selection::kFinal) {
    report.best_episode = cfg.episodes;
  } else {
    model.restore(best);
  }
  const EpisodeRecord& chosen = report.records[report.best_episode - 1];
  report.val_acc = chosen.val_acc;
  report.test_acc = chosen.test_acc;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

SeedSummary run_seeds(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const Dataset& data,
                      const GraphPrior& prior, std::size_t k) {
  if (k < 1) throw ConfigError("need at least one seed");
  SeedSummary s;
  for (std::size_t r = 0; r < k; ++r) {
    ModelConfig cfg = model_cfg;
    cfg.seed = model_cfg.seed + r;
    Model model = Model::build(cfg, data.dim());
    s.seeds.push_back(cfg.seed);
    s.test_acc.push_back(train(model, data, prior, train_cfg).test_acc);
  }
  s.mean = std::accumulate(s.test_acc.begin(), s.test_acc.end(), 0.0) / static_cast<double>(k);
  if (k > 1) {
    double ss = 0.0;
    for (double a : s.test_acc) ss += (a - s.mean) * (a - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(k - 1));
  }
  return s;
}

GradCheckReport grad_check(Model& model, const Dataset& data, const GraphPrior& prior, double epsilon,
                           double tolerance) {
  const Objective objective(model.config(), data.x);
  const Tensor x = Tensor::constant(data.x);
  Rng unused = make_rng(0, 0);
  auto loss_value = [&] {
    Tape tape(false);
    const ForwardOutputs out = model.forward(tape, x, prior, false, unused);
    return objective.evaluate(tape, out, data.y, data.train).total.item();
  };

  {
    Tape tape;
    const ForwardOutputs out = model.forward(tape, x, prior, false, unused);
    const LossBreakdown loss = objective.evaluate(tape, out, data.y, data.train);
    model.zero_grad();
    tape.backward(loss.total);
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& p : model.params()) {
    if (!p.tensor.requires_grad()) continue;
    GradCheckEntry entry;
    entry.param = p.name;
    const Matrix analytic = p.tensor.grad();
    Matrix& w = p.tensor.mutable_value();
    for (std::size_t e = 0; e < w.size(); ++e) {
      const double saved = w[e];
      const double f0 = loss_value();
      w[e] = saved + epsilon;
      const double fp = loss_value();
      w[e] = saved - epsilon;
      const double fm = loss_value();
      w[e] = saved;
      const double forward = (fp - f0) / epsilon;
      const double backward = (f0 - fm) / epsilon;
      // A kink inside [w - eps, w + eps] shows up as disagreeing one-sided slopes.
      if (std::abs(forward - backward) > std::max(1e-4, 1e-2 * std::max(std::abs(forward), std::abs(backward)))) {
        ++entry.skipped;
        continue;
      }
      const double fd = (fp - fm) / (2.0 * epsilon);
      const double g = analytic[e];
      // Differences smaller than the loss's own rounding noise are not resolvable,
      // so the denominator floor scales with |loss|.
      const double floor = 1e-6 * std::max(1.0, std::abs(f0));
      const double rel = std::abs(g - fd) / std::max({floor, std::abs(g), std::abs(fd)});
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      ++entry.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(entry);
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

GradCheckReport grad_check(const GradCheckSpec& spec) {
  if (spec.nodes < spec.classes || spec.nodes > 10) throw ConfigError("gradient check needs classes <= N <= 10");
  Rng rng = make_rng(spec.seed, 7);
  Dataset data;
  data.name = "gradcheck";
  data.classes = spec.classes;
  data.x = Matrix(spec.nodes, spec.dim);
  for (double& v : data.x.values()) v = standard_normal(rng);
  data.y.resize(spec.nodes);
  for (std::size_t i = 0; i < spec.nodes; ++i) {
    data.y[i] = static_cast<int>(i < spec.classes ? i : uniform_index(rng, spec.classes));
  }
  for (std::size_t i = 0; i < spec.nodes; ++i) {
    (i < spec.classes || i % 3 == 0 ? data.train : i % 3 == 1 ? data.val : data.test).push_back(i);
  }
  std::optional<std::vector<Edge>> edges;
  if (spec.with_edges) {
    edges.emplace();
    for (std::size_t i = 0; i + 1 < spec.nodes; ++i) edges->emplace_back(i, i + 1);
    for (std::size_t i = 0; i < spec.nodes; ++i) {
      for (std::size_t j = i + 2; j < spec.nodes; ++j) {
        if (uniform01(rng) < 0.3) edges->emplace_back(i, j);
      }
    }
  }
  const GraphPrior prior = build_prior(spec.nodes, edges);

  ModelConfig cfg;
  cfg.variant = spec.variant;
  cfg.d0 = spec.d0;
  cfg.d1 = spec.d1;
  cfg.classes = spec.classes;
  cfg.seed = spec.seed;
  // Larger smoothness and sparsity weights so the graph terms are not swamped.
  cfg.loss = {0.1, 0.1, 0.1};
  Model model = Model::build(cfg, spec.dim);
  for (auto& p : model.params()) {
    const bool metric = p.name.starts_with("alpha") || p.name.starts_with("gamma");
    if (metric) {
      for (double& v : p.tensor.mutable_value().values()) v = uniform(rng, -0.5, 1.0);
    } else if (p.name == "eta") {
      for (double& v : p.tensor.mutable_value().values()) v = uniform(rng, 0.2, 0.6);
    }
  }
  return grad_check(model, data, prior, spec.epsilon, spec.tolerance);
}

}  // namespace glssl
