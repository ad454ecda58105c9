#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "glssl/errors.hpp"
#include "glssl/model.hpp"

namespace glssl {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint body assumes little-endian");

constexpr std::string_view kMagic = "GLSSL-CHECKPOINT 1";

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IngestionError(path.string() + ": checkpoint body truncated");
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write checkpoint " + path.string());
  nlohmann::json head = to_json(model.config());
  head["input_dim"] = model.input_dim();
  os << kMagic << '\n' << head.dump(2) << "\n\n";
  put<std::uint32_t>(os, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    const Matrix& m = p.tensor.value();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint64_t>(os, m.rows());
    put<std::uint64_t>(os, m.cols());
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!os) throw ConfigError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kMagic) {
    throw IngestionError(path.string() + ": not a checkpoint (bad magic line)");
  }
  std::string text;
  while (std::getline(is, line) && !line.empty()) text += line + '\n';
  nlohmann::json head;
  try {
    head = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(path.string() + ": bad configuration block: " + e.what());
  }
  ModelConfig cfg;
  std::size_t input_dim = 0;
  try {
    cfg = model_config_from_json(head);
    input_dim = head.at("input_dim").get<std::size_t>();
  } catch (const std::exception& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
  Model model = Model::build(cfg, input_dim);
  const auto count = take<std::uint32_t>(is, path);
  if (count != model.params().size()) {
    throw IngestionError(path.string() + ": expected " + std::to_string(model.params().size()) +
                         " parameters, found " + std::to_string(count));
  }
  for (auto& p : model.params()) {
    const auto len = take<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IngestionError(path.string() + ": checkpoint body truncated");
    if (name != p.name) {
      throw IngestionError(path.string() + ": expected parameter " + p.name + ", found " + name);
    }
    const auto rows = take<std::uint64_t>(is, path);
    const auto cols = take<std::uint64_t>(is, path);
    Matrix& m = p.tensor.mutable_value();
    if (rows != m.rows() || cols != m.cols()) {
      throw IngestionError(path.string() + ": parameter " + name + " has shape " + std::to_string(rows) +
                           "x" + std::to_string(cols) + ", expected " + m.shape_string());
    }
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw IngestionError(path.string() + ": checkpoint body truncated");
    }
  }
  return model;
}

}  // namespace glssl
