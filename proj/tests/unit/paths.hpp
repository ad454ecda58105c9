#pragma once

#include <filesystem>
#include <string>

namespace test_paths {

inline std::filesystem::path fixture() { return std::filesystem::path(GLSSL_TEST_DATA_DIR) / "fixture30"; }

// Fresh empty directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::path(GLSSL_TEST_SCRATCH_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test_paths
