#include "glssl/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "glssl/dataset.hpp"
#include "glssl/errors.hpp"
#include "glssl/graph_prior.hpp"
#include "glssl/kernels.hpp"
#include "glssl/model.hpp"
#include "glssl/projection.hpp"
#include "glssl/training.hpp"

namespace glssl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kManifestVersion = 1;

// Raw flag values. Defaults come from the library configs so the two never drift.
struct Flags {
  std::string bundle, out, manifest, checkpoint;
  bool use_prior = true;
  std::string feature_norm = "auto";
  std::vector<std::size_t> resplit;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  std::size_t ablate_seeds = 5;
  std::size_t gradcheck_seeds = 5;
  double memory_budget_gb = 4.0;
  bool force = false;

  std::string variant = "dgl";
  std::vector<std::string> variants{"glgcn", "dgl-non-local", "dgl-shallow-metric", "dgl"};
  std::string gradcheck_variant = "all";
  std::size_t d0 = ModelConfig{}.d0, d1 = ModelConfig{}.d1;
  double dropout = ModelConfig{}.dropout;
  double lambda1 = losses::LossWeights{}.lambda1;
  double lambda2 = losses::LossWeights{}.lambda2;
  double lambda3 = losses::LossWeights{}.lambda3;
  std::string degree_from{to_string(ModelConfig{}.degree_from)};
  std::string attention_graph{to_string(ModelConfig{}.attention_graph)};
  std::string graph_loss_features{to_string(ModelConfig{}.graph_loss_features)};

  std::size_t episodes = TrainConfig{}.episodes;
  double lr = TrainConfig{}.lr;
  double weight_decay = TrainConfig{}.weight_decay;
  std::string optimizer{to_string(TrainConfig{}.optimizer)};
  std::string select{to_string(TrainConfig{}.select)};

  GradCheckSpec gc;
  bool gc_no_edges = false;
  SyntheticSpec synth;
};

std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string significant(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f.flush()) throw std::runtime_error("write to " + path.string() + " failed");
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read manifest " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
}

ModelConfig model_from_flags(const Flags& f, const std::string& variant) {
  ModelConfig m;
  m.variant = parse_variant(variant);
  m.d0 = f.d0;
  m.d1 = f.d1;
  m.dropout = f.dropout;
  m.loss = {f.lambda1, f.lambda2, f.lambda3};
  m.degree_from = parse_degree_from(f.degree_from);
  m.attention_graph = parse_attention_graph(f.attention_graph);
  m.graph_loss_features = parse_graph_loss_features(f.graph_loss_features);
  m.seed = f.seed;
  return m;
}

TrainConfig train_from_flags(const Flags& f) {
  TrainConfig t;
  t.episodes = f.episodes;
  t.lr = f.lr;
  t.weight_decay = f.weight_decay;
  t.optimizer = parse_optimizer(f.optimizer);
  t.select = parse_selection(f.select);
  validate(t);
  return t;
}

std::string absolute_path(const std::string& p) {
  if (p.empty()) throw ConfigError("a path flag is empty");
  return fs::absolute(p).lexically_normal().string();
}

json data_section(const Flags& f) {
  if (f.bundle.empty()) throw ConfigError("--bundle is required");
  parse_feature_norm(f.feature_norm);
  return {{"bundle", absolute_path(f.bundle)},
          {"use_prior", f.use_prior},
          {"feature_norm", f.feature_norm},
          {"resplit", f.resplit},
          {"memory_budget_gb", f.memory_budget_gb},
          {"force", f.force}};
}

// Fully resolved configuration of one invocation. This is both what the run
// header prints and what manifest.json stores; execution reads only this.
json resolve(const std::string& command, const Flags& f) {
  json j{{"command", command}, {"version", kManifestVersion}};
  if (command == "train" || command == "ablate") {
    j["data"] = data_section(f);
    j["seed"] = f.seed;
    j["seeds"] = command == "train" ? f.seeds : f.ablate_seeds;
    j["model"] = to_json(model_from_flags(f, f.variant));
    j["train"] = to_json(train_from_flags(f));
    if (command == "ablate") {
      for (const auto& v : f.variants) parse_variant(v);
      j["variants"] = f.variants;
      j["model"].erase("variant");
    }
  } else if (command == "project") {
    j["data"] = data_section(f);
    if (f.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    j["checkpoint"] = absolute_path(f.checkpoint);
  } else if (command == "gradcheck") {
    std::vector<std::string> names;
    if (f.gradcheck_variant == "all") {
      for (Variant v : {Variant::kDgl, Variant::kGlgcn, Variant::kDglNonLocal,
                        Variant::kDglShallowMetric, Variant::kGcnBaseline}) {
        names.emplace_back(to_string(v));
      }
    } else {
      names.emplace_back(to_string(parse_variant(f.gradcheck_variant)));
    }
    j["variants"] = names;
    j["seed"] = f.seed;
    j["seeds"] = f.gradcheck_seeds;
    j["nodes"] = f.gc.nodes;
    j["dim"] = f.gc.dim;
    j["classes"] = f.gc.classes;
    j["d0"] = f.gc.d0;
    j["d1"] = f.gc.d1;
    j["with_edges"] = !f.gc_no_edges;
    j["epsilon"] = f.gc.epsilon;
    j["tolerance"] = f.gc.tolerance;
  } else if (command == "synth") {
    const SyntheticSpec& s = f.synth;
    j["synthetic"] = {{"classes", s.classes},
                      {"per_class", s.per_class},
                      {"dim", s.dim},
                      {"labeled_per_class", s.labeled_per_class},
                      {"val_per_class", s.val_per_class},
                      {"separation", s.separation},
                      {"seed", s.seed}};
  }
  return j;
}

void print_header(std::ostream& out, const json& cfg) {
  out << "glssl " << cfg.at("command").get<std::string>() << "\n"
      << cfg.dump(2) << "\n"
      << "kernels: " << kernels::active().name << ", threads: " << kernels::thread_count() << "\n";
}

void write_manifest(const fs::path& dir, const json& cfg) {
  fs::create_directories(dir);
  write_text(dir / "manifest.json", cfg.dump(2) + "\n");
}

struct Prepared {
  Dataset data;
  GraphPrior prior;
};

Prepared prepare(const json& d, std::uint64_t seed, std::ostream& out) {
  Prepared p;
  p.data = load_bundle(d.at("bundle").get<std::string>());
  apply_feature_norm(p.data, parse_feature_norm(d.at("feature_norm").get<std::string>()));
  const auto resplit = d.at("resplit").get<std::vector<std::size_t>>();
  if (!resplit.empty()) {
    if (resplit.size() != 3) throw ConfigError("--resplit takes three sizes: train val test");
    p.data = subsample_splits(p.data, resplit[0], resplit[1], resplit[2], seed);
  }
  const bool use_prior = d.at("use_prior").get<bool>();
  if (use_prior && !p.data.edges) out << "note: bundle has no edge list, using the all-ones prior\n";
  p.prior = build_prior(p.data.n(), use_prior ? p.data.edges : std::nullopt);
  out << "data: " << p.data.name << ", " << p.data.n() << " nodes, " << p.data.dim() << " features, "
      << p.data.classes << " classes, split " << p.data.train.size() << "/" << p.data.val.size() << "/"
      << p.data.test.size() << ", prior " << (p.prior.has_edges() ? "edges" : "all-ones") << "\n";
  return p;
}

void guard_memory(const ModelConfig& m, const Dataset& data, const json& d) {
  const double budget = d.at("memory_budget_gb").get<double>();
  const double need = static_cast<double>(estimate_training_bytes(m, data.n(), data.dim())) /
                      (1024.0 * 1024.0 * 1024.0);
  if (need <= budget || d.at("force").get<bool>()) return;
  throw ConfigError("estimated peak memory " + significant(need) + " GiB for " + std::to_string(data.n()) +
                    " nodes (" + std::string(to_string(m.variant)) + ") exceeds the budget of " +
                    significant(budget) + " GiB; raise --memory-budget-gb or pass --force");
}

EpisodeCallback progress(std::ostream& out, std::size_t episodes) {
  return [&out, episodes](const EpisodeRecord& r) {
    if (r.episode != 1 && r.episode % 10 != 0 && r.episode != episodes) return;
    char line[160];
    std::snprintf(line, sizeof line, "  ep %4zu  loss %.6g (c %.6g, g %.6g)  val %.4f  test %.4f\n",
                  r.episode, r.loss, r.loss_c, r.loss_g, r.val_acc, r.test_acc);
    out << line << std::flush;
  };
}

struct SeedRun {
  std::uint64_t seed;
  TrainReport report;
};

SeedRun train_one(const Prepared& p, ModelConfig m, const TrainConfig& t, std::uint64_t seed,
                  const fs::path& dir, std::ostream& out) {
  m.seed = seed;
  Model model = Model::build(m, p.data.dim());
  out << "seed " << seed << " (" << to_string(m.variant) << ")\n";
  SeedRun run{seed, train(model, p.data, p.prior, t, progress(out, t.episodes))};
  fs::create_directories(dir);
  write_text(dir / "report.jsonl", report_jsonl(run.report));
  json summary = summary_json(run.report);
  summary["seed"] = seed;
  summary["variant"] = to_string(m.variant);
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  save_checkpoint(dir / "model.ckpt", model);
  out << "seed " << seed << ": best episode " << run.report.best_episode << ", val "
      << fixed(run.report.val_acc, 4) << ", test " << fixed(run.report.test_acc, 4) << " ("
      << fixed(run.report.wall_seconds, 1) << " s)\n";
  return run;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double a : v) ss += (a - mean) * (a - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

std::vector<std::uint64_t> seed_list(const json& cfg) {
  const auto k = cfg.at("seeds").get<std::size_t>();
  if (k < 1) throw ConfigError("--seeds must be at least 1");
  std::vector<std::uint64_t> s(k);
  std::iota(s.begin(), s.end(), cfg.at("seed").get<std::uint64_t>());
  return s;
}

int cmd_train(const json& cfg, const fs::path& out_dir, std::ostream& out) {
  const auto seeds = seed_list(cfg);
  const Prepared p = prepare(cfg.at("data"), seeds.front(), out);
  ModelConfig m = model_config_from_json(cfg.at("model"));
  m.classes = p.data.classes;
  validate(m);
  const TrainConfig t = train_config_from_json(cfg.at("train"));
  guard_memory(m, p.data, cfg.at("data"));
  write_manifest(out_dir, cfg);

  std::vector<double> acc;
  for (std::uint64_t s : seeds) {
    const fs::path dir = seeds.size() == 1 ? out_dir : out_dir / ("seed-" + std::to_string(s));
    acc.push_back(train_one(p, m, t, s, dir, out).report.test_acc);
  }
  if (seeds.size() > 1) {
    const auto [mean, sd] = mean_std(acc);
    const json summary{{"variant", to_string(m.variant)}, {"seeds", seeds}, {"test_acc", mean},
                       {"test_acc_std", sd},              {"per_seed_test_acc", acc}};
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
    out << "test accuracy: " << fixed(100 * mean, 2) << " +- " << fixed(100 * sd, 2) << " % over "
        << seeds.size() << " seeds\n";
  } else {
    out << "test accuracy: " << fixed(100 * acc.front(), 2) << " %\n";
  }
  return kExitOk;
}

int cmd_ablate(const json& cfg, const fs::path& out_dir, std::ostream& out) {
  const auto seeds = seed_list(cfg);
  const Prepared p = prepare(cfg.at("data"), seeds.front(), out);
  const auto names = cfg.at("variants").get<std::vector<std::string>>();
  if (names.empty()) throw ConfigError("--variants is empty");
  const TrainConfig t = train_config_from_json(cfg.at("train"));
  std::vector<ModelConfig> models;
  for (const auto& name : names) {
    json mj = cfg.at("model");
    mj["variant"] = name;
    ModelConfig m = model_config_from_json(mj);
    m.classes = p.data.classes;
    validate(m);
    guard_memory(m, p.data, cfg.at("data"));
    models.push_back(m);
  }
  write_manifest(out_dir, cfg);

  std::string csv = "variant,mean,std,runs";
  for (auto s : seeds) csv += ",seed_" + std::to_string(s);
  csv += "\n";
  std::vector<std::array<std::string, 4>> rows;
  for (const ModelConfig& m : models) {
    std::vector<double> acc;
    const std::string name{to_string(m.variant)};
    for (std::uint64_t s : seeds) {
      const fs::path dir = out_dir / name / ("seed-" + std::to_string(s));
      acc.push_back(train_one(p, m, t, s, dir, out).report.test_acc);
    }
    const auto [mean, sd] = mean_std(acc);
    csv += name + "," + shortest(mean) + "," + shortest(sd) + "," + std::to_string(acc.size());
    for (double a : acc) csv += "," + shortest(a);
    csv += "\n";
    rows.push_back({name, fixed(100 * mean, 2), fixed(100 * sd, 2), std::to_string(acc.size())});
  }
  write_text(out_dir / "ablation.csv", csv);

  const std::array<std::string, 4> head{"variant", "mean %", "std %", "runs"};
  std::array<std::size_t, 4> w{};
  for (std::size_t c = 0; c < 4; ++c) {
    w[c] = head[c].size();
    for (const auto& r : rows) w[c] = std::max(w[c], r[c].size());
  }
  std::ostringstream text;
  auto emit = [&](const std::array<std::string, 4>& r) {
    text << std::left << std::setw(static_cast<int>(w[0])) << r[0];
    for (std::size_t c = 1; c < 4; ++c) text << "  " << std::right << std::setw(static_cast<int>(w[c])) << r[c];
    text << "\n";
  };
  emit(head);
  for (const auto& r : rows) emit(r);
  write_text(out_dir / "ablation.txt", text.str());
  out << "\n" << text.str();
  return kExitOk;
}

int cmd_project(const json& cfg, const fs::path& out_dir, std::ostream& out) {
  const Prepared p = prepare(cfg.at("data"), 0, out);
  const Model model = load_checkpoint(cfg.at("checkpoint").get<std::string>());
  if (model.input_dim() != p.data.dim() || model.config().classes != p.data.classes) {
    throw ConfigError("checkpoint expects " + std::to_string(model.input_dim()) + " features and " +
                      std::to_string(model.config().classes) + " classes, bundle has " +
                      std::to_string(p.data.dim()) + " and " + std::to_string(p.data.classes));
  }
  guard_memory(model.config(), p.data, cfg.at("data"));
  write_manifest(out_dir, cfg);
  const Projection proj = project_2d(embed(model, p.data, p.prior));
  write_projection_csv(out_dir / "nodes.csv", proj, p.data);
  out << "projected " << p.data.n() << " nodes; component variances " << shortest(proj.variance[0]) << ", "
      << shortest(proj.variance[1]) << "\n";
  return kExitOk;
}

int cmd_gradcheck(const json& cfg, const fs::path& out_dir, std::ostream& out) {
  const auto seeds = seed_list(cfg);
  GradCheckSpec base;
  base.nodes = cfg.at("nodes").get<std::size_t>();
  base.dim = cfg.at("dim").get<std::size_t>();
  base.classes = cfg.at("classes").get<std::size_t>();
  base.d0 = cfg.at("d0").get<std::size_t>();
  base.d1 = cfg.at("d1").get<std::size_t>();
  base.with_edges = cfg.at("with_edges").get<bool>();
  base.epsilon = cfg.at("epsilon").get<double>();
  base.tolerance = cfg.at("tolerance").get<double>();

  bool pass = true;
  double worst = 0;
  json results = json::array();
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %4s  %-12s %7s %7s  %s\n", "variant", "seed", "param", "checked",
                "skipped", "max rel err");
  out << line;
  for (const auto& name : cfg.at("variants").get<std::vector<std::string>>()) {
    for (std::uint64_t s : seeds) {
      GradCheckSpec spec = base;
      spec.variant = parse_variant(name);
      spec.seed = s;
      const GradCheckReport r = grad_check(spec);
      pass = pass && r.pass;
      worst = std::max(worst, r.max_rel_error);
      json entries = json::array();
      for (const auto& e : r.entries) {
        std::snprintf(line, sizeof line, "%-20s %4llu  %-12s %7zu %7zu  %.3e\n", name.c_str(),
                      static_cast<unsigned long long>(s), e.param.c_str(), e.checked, e.skipped,
                      e.max_rel_error);
        out << line;
        entries.push_back({{"param", e.param},
                           {"checked", e.checked},
                           {"skipped", e.skipped},
                           {"max_rel_error", e.max_rel_error}});
      }
      results.push_back({{"variant", name},
                         {"seed", s},
                         {"max_rel_error", r.max_rel_error},
                         {"pass", r.pass},
                         {"entries", entries}});
    }
  }
  out << "worst relative error " << std::scientific << std::setprecision(3) << worst << std::defaultfloat
      << " (tolerance " << shortest(base.tolerance) << "): " << (pass ? "PASS" : "FAIL") << "\n";
  if (!out_dir.empty()) {
    write_manifest(out_dir, cfg);
    write_text(out_dir / "gradcheck.json", json{{"pass", pass}, {"runs", results}}.dump(2) + "\n");
  }
  return pass ? kExitOk : kExitGradcheck;
}

int cmd_synth(const json& cfg, const fs::path& out_dir, std::ostream& out) {
  const json& j = cfg.at("synthetic");
  SyntheticSpec s;
  s.classes = j.at("classes").get<std::size_t>();
  s.per_class = j.at("per_class").get<std::size_t>();
  s.dim = j.at("dim").get<std::size_t>();
  s.labeled_per_class = j.at("labeled_per_class").get<std::size_t>();
  s.val_per_class = j.at("val_per_class").get<std::size_t>();
  s.separation = j.at("separation").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  const Dataset d = generate_synthetic(s);
  save_bundle(d, out_dir);
  write_manifest(out_dir, cfg);
  out << "wrote " << d.n() << " nodes (" << d.train.size() << "/" << d.val.size() << "/" << d.test.size()
      << ") to " << out_dir.string() << "\n";
  return kExitOk;
}

void add_data_flags(CLI::App* c, Flags& f) {
  c->add_option("--bundle", f.bundle, "bundle directory (features.csv, labels.csv, split.json, edges.tsv)");
  c->add_flag("--use-prior,!--no-prior", f.use_prior, "mask the learned graphs with the bundle's edges (default on)");
  c->add_option("--feature-norm", f.feature_norm, "auto, none or l1")->capture_default_str();
  c->add_option("--resplit", f.resplit, "draw a fresh balanced split: TRAIN VAL TEST")->expected(3);
  c->add_option("--memory-budget-gb", f.memory_budget_gb, "refuse runs estimated above this")
      ->capture_default_str();
  c->add_flag("--force", f.force, "run even above the memory budget");
}

void add_model_flags(CLI::App* c, Flags& f, bool with_variant) {
  if (with_variant) {
    c->add_option("--variant", f.variant, "dgl, glgcn, dgl-non-local, dgl-shallow-metric, gcn-baseline")
        ->capture_default_str();
  }
  c->add_option("--episodes", f.episodes)->capture_default_str();
  c->add_option("--lr", f.lr)->capture_default_str();
  c->add_option("--dropout", f.dropout)->capture_default_str();
  c->add_option("--lambda1", f.lambda1, "Laplacian smoothness weight")->capture_default_str();
  c->add_option("--lambda2", f.lambda2, "Frobenius sparsity weight")->capture_default_str();
  c->add_option("--lambda3", f.lambda3, "graph consistency weight")->capture_default_str();
  c->add_option("--d0", f.d0, "first hidden width")->capture_default_str();
  c->add_option("--d1", f.d1, "second hidden width")->capture_default_str();
  c->add_option("--seed", f.seed, "first seed")->capture_default_str();
  c->add_option("--select", f.select, "best_val or final")->capture_default_str();
  c->add_option("--degree-from", f.degree_from, "a_hat or a_l")->capture_default_str();
  c->add_option("--attention-graph", f.attention_graph, "a1 or a0")->capture_default_str();
  c->add_option("--graph-loss-features", f.graph_loss_features, "raw or layer")->capture_default_str();
  c->add_option("--optimizer", f.optimizer, "adam or sgd")->capture_default_str();
  c->add_option("--weight-decay", f.weight_decay)->capture_default_str();
}

std::string required_out(const Flags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  return f.out;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Flags f;
  CLI::App app{"Graph learning for semi-supervised node classification"};
  app.require_subcommand(1, 1);

  CLI::App* train_cmd = app.add_subcommand("train", "train one variant on a bundle");
  add_data_flags(train_cmd, f);
  add_model_flags(train_cmd, f, true);
  train_cmd->add_option("--seeds", f.seeds, "number of consecutive seeds")->capture_default_str();

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "compare variants over several seeds");
  add_data_flags(ablate_cmd, f);
  add_model_flags(ablate_cmd, f, false);
  ablate_cmd->add_option("--variants", f.variants, "variants in table order")->delimiter(',');
  ablate_cmd->add_option("--seeds", f.ablate_seeds, "number of consecutive seeds")->capture_default_str();

  CLI::App* project_cmd = app.add_subcommand("project", "export a 2-D projection of the learned representation");
  add_data_flags(project_cmd, f);
  project_cmd->add_option("--checkpoint", f.checkpoint, "model.ckpt written by train");

  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "compare tape gradients with finite differences");
  gc_cmd->add_option("--variant", f.gradcheck_variant, "a variant name or all")->capture_default_str();
  gc_cmd->add_option("--seed", f.seed, "first seed")->capture_default_str();
  gc_cmd->add_option("--seeds", f.gradcheck_seeds, "number of consecutive seeds")->capture_default_str();
  gc_cmd->add_option("--nodes", f.gc.nodes)->capture_default_str();
  gc_cmd->add_option("--dim", f.gc.dim)->capture_default_str();
  gc_cmd->add_option("--classes", f.gc.classes)->capture_default_str();
  gc_cmd->add_option("--d0", f.gc.d0)->capture_default_str();
  gc_cmd->add_option("--d1", f.gc.d1)->capture_default_str();
  gc_cmd->add_flag("--no-edges", f.gc_no_edges, "use the all-ones prior");
  gc_cmd->add_option("--eps", f.gc.epsilon, "central difference step")->capture_default_str();
  gc_cmd->add_option("--tol", f.gc.tolerance, "maximum relative error")->capture_default_str();

  CLI::App* synth_cmd = app.add_subcommand("synth", "write a Gaussian blob bundle");
  synth_cmd->add_option("--seed", f.synth.seed)->capture_default_str();
  synth_cmd->add_option("--classes", f.synth.classes)->capture_default_str();
  synth_cmd->add_option("--per-class", f.synth.per_class, "nodes per class")->capture_default_str();
  synth_cmd->add_option("--dim", f.synth.dim)->capture_default_str();
  synth_cmd->add_option("--labeled-per-class", f.synth.labeled_per_class)->capture_default_str();
  synth_cmd->add_option("--val-per-class", f.synth.val_per_class)->capture_default_str();
  synth_cmd->add_option("--separation", f.synth.separation, "distance of each class mean from the origin")
      ->capture_default_str();

  for (CLI::App* c : {train_cmd, ablate_cmd, project_cmd, gc_cmd, synth_cmd}) {
    c->add_option("--out", f.out, "output directory");
    c->add_option("--manifest", f.manifest, "rerun the configuration stored in a manifest.json");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    err << "error: " << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
    return kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    json cfg;
    if (!f.manifest.empty()) {
      for (const CLI::Option* o : sub->get_options()) {
        const std::string name = o->get_name();
        if (o->count() > 0 && name != "--manifest" && name != "--out") {
          throw ConfigError(name + " cannot be combined with --manifest");
        }
      }
      cfg = read_json(f.manifest);
      if (cfg.value("command", "") != command) {
        throw ConfigError("manifest " + f.manifest + " is for '" + cfg.value("command", "?") + "', not '" +
                          command + "'");
      }
      if (cfg.value("version", 0) != kManifestVersion) throw ConfigError("unsupported manifest version");
    } else {
      cfg = resolve(command, f);
    }
    print_header(out, cfg);

    if (command == "train") return cmd_train(cfg, required_out(f), out);
    if (command == "ablate") return cmd_ablate(cfg, required_out(f), out);
    if (command == "project") return cmd_project(cfg, required_out(f), out);
    if (command == "gradcheck") return cmd_gradcheck(cfg, f.out, out);
    return cmd_synth(cfg, required_out(f), out);
  } catch (const IngestionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIngestion;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const DegenerateError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    err << "error: bad manifest: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIngestion;
  }
}

}  // namespace glssl::cli
