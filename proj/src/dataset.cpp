#include "glssl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string_view>

#include <json.hpp>

#include "glssl/errors.hpp"
#include "glssl/random.hpp"

namespace glssl {
namespace fs = std::filesystem;
namespace {

std::string where(const fs::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

std::ifstream open_input(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw IngestionError(file.string() + ": cannot open (missing file?)");
  return is;
}

// Calls fn(line_number, text) for every line, with a trailing CR removed.
// Blank lines are allowed only at the end of the file.
template <typename Fn>
void for_each_line(const fs::path& file, Fn&& fn) {
  std::ifstream is = open_input(file);
  std::string line;
  std::size_t number = 0;
  std::size_t blank_at = 0;
  while (std::getline(is, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (blank_at == 0) blank_at = number;
      continue;
    }
    if (blank_at != 0) throw IngestionError(where(file, blank_at) + ": blank line inside data");
    fn(number, std::string_view(line));
  }
}

template <typename T>
T parse_number(std::string_view text, const fs::path& file, std::size_t line) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw IngestionError(where(file, line) + ": cannot parse '" + std::string(text) + "' as a number");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw IngestionError(where(file, line) + ": non-finite value");
  }
  return value;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::size_t> read_index_array(const nlohmann::json& j, const char* key, const fs::path& file) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw IngestionError(file.string() + ": missing integer array \"" + key + "\"");
  }
  std::vector<std::size_t> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw IngestionError(file.string() + ": \"" + key + "\" holds a non-index entry " + v.dump());
    }
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

}  // namespace

void validate(const Dataset& d) {
  const std::size_t n = d.n();
  if (d.y.size() != n) {
    throw IngestionError(std::to_string(d.y.size()) + " labels for " + std::to_string(n) + " feature rows");
  }
  if (d.classes == 0) throw IngestionError("dataset has no classes");
  for (std::size_t i = 0; i < n; ++i) {
    if (d.y[i] < 0 || static_cast<std::size_t>(d.y[i]) >= d.classes) {
      throw IngestionError("label " + std::to_string(d.y[i]) + " of node " + std::to_string(i) +
                           " outside [0, " + std::to_string(d.classes) + ")");
    }
  }
  if (d.train.empty()) throw IngestionError("train split is empty");
  std::vector<int> owner(n, -1);
  const std::pair<const char*, const std::vector<std::size_t>*> splits[] = {
      {"train", &d.train}, {"val", &d.val}, {"test", &d.test}};
  for (int s = 0; s < 3; ++s) {
    for (std::size_t i : *splits[s].second) {
      if (i >= n) {
        throw IngestionError(std::string(splits[s].first) + " index " + std::to_string(i) +
                             " outside [0, " + std::to_string(n) + ")");
      }
      if (owner[i] != -1) {
        throw IngestionError("node " + std::to_string(i) + " appears in both " + splits[owner[i]].first +
                             " and " + splits[s].first);
      }
      owner[i] = s;
    }
  }
  std::vector<bool> seen(d.classes, false);
  for (std::size_t i : d.train) seen[static_cast<std::size_t>(d.y[i])] = true;
  for (std::size_t c = 0; c < d.classes; ++c) {
    if (!seen[c]) throw IngestionError("class " + std::to_string(c) + " has no training node");
  }
  if (d.edges) {
    for (const auto& [a, b] : *d.edges) {
      if (a >= n || b >= n) {
        throw IngestionError("edge (" + std::to_string(a) + ", " + std::to_string(b) + ") outside [0, " +
                             std::to_string(n) + ")");
      }
    }
  }
}

Dataset load_bundle(const fs::path& dir) {
  Dataset d;
  d.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();

  const fs::path features = dir / "features.csv";
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  for_each_line(features, [&](std::size_t line, std::string_view text) {
    std::size_t count = 0;
    while (true) {
      const auto comma = text.find(',');
      values.push_back(parse_number<double>(text.substr(0, comma), features, line));
      ++count;
      if (comma == std::string_view::npos) break;
      text.remove_prefix(comma + 1);
    }
    if (rows == 0) cols = count;
    if (count != cols) {
      throw IngestionError(where(features, line) + ": ragged row with " + std::to_string(count) +
                           " columns, expected " + std::to_string(cols));
    }
    ++rows;
  });
  if (rows == 0) throw IngestionError(features.string() + ": no rows");
  d.x = Matrix(rows, cols, std::move(values));

  const fs::path labels = dir / "labels.csv";
  int max_label = -1;
  for_each_line(labels, [&](std::size_t line, std::string_view text) {
    const int y = parse_number<int>(text, labels, line);
    if (y < 0) throw IngestionError(where(labels, line) + ": label " + std::to_string(y) + " is negative");
    if (d.y.size() == rows) {
      throw IngestionError(where(labels, line) + ": more labels than the " + std::to_string(rows) +
                           " feature rows");
    }
    d.y.push_back(y);
    max_label = std::max(max_label, y);
  });
  if (d.y.size() != rows) {
    throw IngestionError(labels.string() + ": " + std::to_string(d.y.size()) + " labels for " +
                         std::to_string(rows) + " feature rows");
  }
  d.classes = static_cast<std::size_t>(max_label + 1);

  const fs::path split = dir / "split.json";
  nlohmann::json j;
  {
    std::ifstream is = open_input(split);
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw IngestionError(split.string() + ": " + e.what());
    }
  }
  d.train = read_index_array(j, "train", split);
  d.val = read_index_array(j, "val", split);
  d.test = read_index_array(j, "test", split);

  const fs::path edges = dir / "edges.tsv";
  if (fs::exists(edges)) {
    std::vector<Edge> list;
    for_each_line(edges, [&](std::size_t line, std::string_view text) {
      const auto tab = text.find('\t');
      if (tab == std::string_view::npos || text.find('\t', tab + 1) != std::string_view::npos) {
        throw IngestionError(where(edges, line) + ": expected two tab-separated indices");
      }
      const auto a = parse_number<std::size_t>(text.substr(0, tab), edges, line);
      const auto b = parse_number<std::size_t>(text.substr(tab + 1), edges, line);
      if (a >= rows || b >= rows) {
        throw IngestionError(where(edges, line) + ": node index outside [0, " + std::to_string(rows) + ")");
      }
      list.emplace_back(a, b);
    });
    d.edges = std::move(list);
  }

  try {
    validate(d);
  } catch (const IngestionError& e) {
    throw IngestionError(dir.string() + ": " + e.what());
  }
  return d;
}

void save_bundle(const Dataset& d, const fs::path& dir) {
  validate(d);
  fs::create_directories(dir);
  auto open = [](const fs::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + p.string());
    return os;
  };
  {
    std::ofstream os = open(dir / "features.csv");
    std::string line;
    for (std::size_t i = 0; i < d.n(); ++i) {
      line.clear();
      for (std::size_t k = 0; k < d.dim(); ++k) {
        if (k) line += ',';
        line += format_double(d.x(i, k));
      }
      line += '\n';
      os << line;
    }
  }
  {
    std::ofstream os = open(dir / "labels.csv");
    for (int y : d.y) os << y << '\n';
  }
  {
    nlohmann::json j = {{"train", d.train}, {"val", d.val}, {"test", d.test}};
    std::ofstream os = open(dir / "split.json");
    os << j.dump() << '\n';
  }
  const fs::path edges = dir / "edges.tsv";
  if (d.edges) {
    std::ofstream os = open(edges);
    for (const auto& [a, b] : *d.edges) os << a << '\t' << b << '\n';
  } else if (fs::exists(edges)) {
    fs::remove(edges);
  }
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (spec.labeled_per_class < 1) throw ConfigError("labeled-per-class must be at least 1");
  if (spec.dim < spec.classes) {
    throw ConfigError("dimension " + std::to_string(spec.dim) + " cannot hold " +
                      std::to_string(spec.classes) + " orthogonal class means");
  }
  if (spec.per_class < spec.labeled_per_class + spec.val_per_class) {
    throw ConfigError("per-class count " + std::to_string(spec.per_class) + " is below labeled (" +
                      std::to_string(spec.labeled_per_class) + ") + validation (" +
                      std::to_string(spec.val_per_class) + ")");
  }
  if (!(spec.separation >= 0.0) || !std::isfinite(spec.separation)) {
    throw ConfigError("separation must be a finite nonnegative number");
  }
  Dataset d;
  d.name = "synthetic";
  d.classes = spec.classes;
  const std::size_t n = spec.classes * spec.per_class;
  d.x = Matrix(n, spec.dim);
  d.y.resize(n);
  Rng sample_rng = make_rng(spec.seed, 1);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t k = 0; k < spec.per_class; ++k) {
      const std::size_t i = c * spec.per_class + k;
      d.y[i] = static_cast<int>(c);
      for (double& v : d.x.row(i)) v = standard_normal(sample_rng);
      d.x(i, c) += spec.separation;
    }
  }
  Rng split_rng = make_rng(spec.seed, 2);
  std::vector<std::size_t> members(spec.per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    std::iota(members.begin(), members.end(), c * spec.per_class);
    shuffle(std::span<std::size_t>(members), split_rng);
    for (std::size_t k = 0; k < spec.per_class; ++k) {
      auto& target = k < spec.labeled_per_class                        ? d.train
                     : k < spec.labeled_per_class + spec.val_per_class ? d.val
                                                                       : d.test;
      target.push_back(members[k]);
    }
  }
  std::sort(d.train.begin(), d.train.end());
  std::sort(d.val.begin(), d.val.end());
  std::sort(d.test.begin(), d.test.end());
  return d;
}

void row_normalize_features(Matrix& x) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    double s = 0.0;
    for (double v : row) s += std::abs(v);
    if (s == 0.0) continue;
    for (double& v : row) v /= s;
  }
}

FeatureNorm parse_feature_norm(std::string_view s) {
  if (s == "auto") return FeatureNorm::kAuto;
  if (s == "none") return FeatureNorm::kNone;
  if (s == "l1") return FeatureNorm::kL1;
  throw ConfigError("unknown feature normalization '" + std::string(s) + "' (expected auto, none or l1)");
}

std::string_view to_string(FeatureNorm f) {
  switch (f) {
    case FeatureNorm::kAuto: return "auto";
    case FeatureNorm::kNone: return "none";
    case FeatureNorm::kL1: return "l1";
  }
  return "?";
}

void apply_feature_norm(Dataset& d, FeatureNorm f) {
  if (f == FeatureNorm::kL1 || (f == FeatureNorm::kAuto && d.edges)) row_normalize_features(d.x);
}

Dataset subsample_splits(const Dataset& d, std::size_t train_n, std::size_t val_n, std::size_t test_n,
                         std::uint64_t seed) {
  const std::size_t n = d.n();
  if (train_n == 0) throw ConfigError("train size must be positive");
  if (train_n + val_n + test_n > n) {
    throw ConfigError("requested " + std::to_string(train_n + val_n + test_n) + " split nodes from " +
                      std::to_string(n));
  }
  const std::size_t c = d.classes;
  std::vector<std::vector<std::size_t>> pool(c);
  for (std::size_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(d.y[i])].push_back(i);
  Rng rng = make_rng(seed, 3);
  for (auto& members : pool) shuffle(std::span<std::size_t>(members), rng);

  std::vector<std::size_t> taken(c, 0);
  auto draw = [&](std::size_t total, const char* what) {
    // Equal quota per class; the remainder goes one each to the lowest class indices.
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t quota = total / c + (k < total % c ? 1 : 0);
      if (taken[k] + quota > pool[k].size()) {
        throw ConfigError(std::string("class-balanced ") + what + " split of " + std::to_string(total) +
                          " needs " + std::to_string(quota) + " more nodes of class " + std::to_string(k) +
                          ", only " + std::to_string(pool[k].size() - taken[k]) + " left");
      }
      out.insert(out.end(), pool[k].begin() + static_cast<std::ptrdiff_t>(taken[k]),
                 pool[k].begin() + static_cast<std::ptrdiff_t>(taken[k] + quota));
      taken[k] += quota;
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  Dataset out = d;
  out.train = draw(train_n, "train");
  out.val = draw(val_n, "val");
  out.test = draw(test_n, "test");
  return out;
}

}  // namespace glssl
