#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "glssl/cli.hpp"
#include "glssl/dataset.hpp"
#include "paths.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "glssl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = glssl::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

const std::string kFixture = test_paths::fixture().string();

std::vector<std::string> quick_train(const fs::path& out, const std::string& episodes = "6") {
  return {"train", "--bundle", kFixture, "--episodes", episodes, "--d0", "8", "--d1", "5", "--out", out.string()};
}

}  // namespace

TEST_CASE("unknown flags and missing subcommands exit with usage") {
  Result r = run({"train", "--bundle", kFixture, "--bogus"});
  CHECK(r.code == glssl::cli::kExitConfig);
  CHECK(r.err.find("--bogus") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(run({}).code == glssl::cli::kExitConfig);
  CHECK(run({"fly"}).code == glssl::cli::kExitConfig);
  CHECK(run({"train", "--episodes", "many"}).code == glssl::cli::kExitConfig);
  r = run({"train", "--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("--lambda1") != std::string::npos);
}

TEST_CASE("invalid values are configuration errors") {
  const auto dir = test_paths::scratch("cli_bad");
  CHECK(run({"train", "--bundle", kFixture, "--variant", "gat", "--out", dir.string()}).code == 3);
  CHECK(run({"train", "--bundle", kFixture, "--dropout", "1.5", "--out", dir.string()}).code == 3);
  CHECK(run({"train", "--bundle", kFixture}).code == 3);
  CHECK(run({"train", "--out", dir.string()}).code == 3);
  CHECK(run({"train", "--bundle", (dir / "nothing").string(), "--out", dir.string()}).code == 1);
}

TEST_CASE("synth writes a deterministic bundle") {
  const auto a = test_paths::scratch("cli_synth_a");
  const auto b = test_paths::scratch("cli_synth_b");
  const std::vector<std::string> common{"synth", "--seed", "7", "--labeled-per-class", "2", "--per-class", "110",
                                        "--dim", "8"};
  auto args = common;
  args.insert(args.end(), {"--out", a.string()});
  REQUIRE(run(args).code == 0);
  args = common;
  args.insert(args.end(), {"--out", b.string()});
  REQUIRE(run(args).code == 0);
  for (const char* f : {"features.csv", "labels.csv", "split.json", "manifest.json"}) {
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const glssl::Dataset d = glssl::load_bundle(a);
  CHECK(d.train.size() == 8);
  CHECK(d.val.size() == 400);
  CHECK(d.test.size() == 32);
}

TEST_CASE("synth defaults give the 2/100/898 split") {
  const auto dir = test_paths::scratch("cli_synth_default");
  REQUIRE(run({"synth", "--labeled-per-class", "2", "--out", dir.string()}).code == 0);
  const glssl::Dataset d = glssl::load_bundle(dir);
  CHECK(d.train.size() == 8);
  CHECK(d.test.size() == 3592);
}

TEST_CASE("train writes its outputs and replays from the manifest") {
  const auto a = test_paths::scratch("cli_train_a");
  const Result r = run(quick_train(a));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("test accuracy") != std::string::npos);
  CHECK(r.out.find("\"lambda3\"") != std::string::npos);
  for (const char* f : {"report.jsonl", "summary.json", "model.ckpt", "manifest.json"}) CHECK(fs::exists(a / f));
  CHECK(read_json(a / "summary.json").contains("test_acc"));
  const auto manifest = read_json(a / "manifest.json");
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("train").at("episodes") == 6);
  CHECK(manifest.at("model").at("d0") == 8);

  const auto b = test_paths::scratch("cli_train_b");
  REQUIRE(run({"train", "--manifest", (a / "manifest.json").string(), "--out", b.string()}).code == 0);
  CHECK(slurp(a / "report.jsonl") == slurp(b / "report.jsonl"));
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  CHECK(slurp(a / "model.ckpt") == slurp(b / "model.ckpt"));

  CHECK(run({"train", "--manifest", (a / "manifest.json").string(), "--out", b.string(), "--lr", "1"}).code == 3);
  CHECK(run({"ablate", "--manifest", (a / "manifest.json").string(), "--out", b.string()}).code == 3);
}

TEST_CASE("train without the prior and over several seeds") {
  const auto dir = test_paths::scratch("cli_seeds");
  auto args = quick_train(dir);
  args.insert(args.end(), {"--no-prior", "--seeds", "2", "--seed", "4", "--variant", "glgcn"});
  REQUIRE(run(args).code == 0);
  CHECK(fs::exists(dir / "seed-4" / "report.jsonl"));
  CHECK(fs::exists(dir / "seed-5" / "model.ckpt"));
  const auto s = read_json(dir / "summary.json");
  const auto per = s.at("per_seed_test_acc").get<std::vector<double>>();
  REQUIRE(per.size() == 2);
  CHECK(s.at("test_acc").get<double>() == doctest::Approx((per[0] + per[1]) / 2));
  CHECK(read_json(dir / "manifest.json").at("data").at("use_prior") == false);
}

TEST_CASE("memory guard refuses oversized runs unless forced") {
  const auto dir = test_paths::scratch("cli_guard");
  auto args = quick_train(dir);
  args.insert(args.end(), {"--memory-budget-gb", "1e-6"});
  const Result r = run(args);
  CHECK(r.code == glssl::cli::kExitConfig);
  CHECK(r.err.find("--force") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "report.jsonl"));
  args.push_back("--force");
  CHECK(run(args).code == 0);
}

TEST_CASE("divergence exits with code 2") {
  const auto dir = test_paths::scratch("cli_diverge");
  auto args = quick_train(dir, "50");
  args.insert(args.end(), {"--variant", "gcn-baseline", "--optimizer", "sgd", "--lr", "1e300"});
  CHECK(run(args).code == glssl::cli::kExitDivergence);
}

TEST_CASE("gradcheck exit codes") {
  Result r = run({"gradcheck", "--variant", "dgl", "--seeds", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("alpha0") != std::string::npos);
  CHECK(r.out.find("PASS") != std::string::npos);
  r = run({"gradcheck", "--variant", "glgcn", "--seeds", "1", "--tol", "1e-15"});
  CHECK(r.code == glssl::cli::kExitGradcheck);
  const auto dir = test_paths::scratch("cli_gradcheck");
  CHECK(run({"gradcheck", "--variant", "all", "--seeds", "1", "--out", dir.string()}).code == 0);
  CHECK(read_json(dir / "gradcheck.json").at("runs").size() == 5);
}

TEST_CASE("project writes one csv row per node") {
  const auto train_dir = test_paths::scratch("cli_project_model");
  REQUIRE(run(quick_train(train_dir)).code == 0);
  const auto dir = test_paths::scratch("cli_project");
  REQUIRE(run({"project", "--bundle", kFixture, "--checkpoint", (train_dir / "model.ckpt").string(), "--out",
               dir.string()})
              .code == 0);
  std::istringstream lines(slurp(dir / "nodes.csv"));
  std::string line;
  std::getline(lines, line);
  CHECK(line == "x,y,label,split");
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 30);
  CHECK(fs::exists(dir / "manifest.json"));

  // A checkpoint trained on different data is refused.
  const auto other = test_paths::scratch("cli_project_other");
  REQUIRE(run({"synth", "--per-class", "110", "--dim", "5", "--out", other.string()}).code == 0);
  CHECK(run({"project", "--bundle", other.string(), "--checkpoint", (train_dir / "model.ckpt").string(), "--out",
             dir.string()})
            .code == 3);
}

TEST_CASE("ablate emits csv and aligned tables") {
  const auto dir = test_paths::scratch("cli_ablate");
  const Result r = run({"ablate", "--bundle", kFixture, "--no-prior", "--episodes", "4", "--d0", "6", "--d1", "4",
                        "--seeds", "1", "--out", dir.string()});
  REQUIRE(r.code == 0);
  std::istringstream csv(slurp(dir / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "variant,mean,std,runs,seed_0");
  std::vector<std::string> names;
  while (std::getline(csv, line)) {
    names.push_back(line.substr(0, line.find(',')));
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    const auto third = line.find(',', second + 1);
    CHECK(line.substr(second + 1, third - second - 1) == "0");
  }
  CHECK(names == std::vector<std::string>{"glgcn", "dgl-non-local", "dgl-shallow-metric", "dgl"});
  const std::string text = slurp(dir / "ablation.txt");
  CHECK(text.find("dgl-shallow-metric") != std::string::npos);
  CHECK(fs::exists(dir / "dgl" / "seed-0" / "report.jsonl"));
}
