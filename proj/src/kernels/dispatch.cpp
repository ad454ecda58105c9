#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>

#include "glssl/kernels.hpp"

namespace glssl::kernels {
namespace {

const KernelTable* resolve() {
  if (const char* env = std::getenv("GLSSL_SIMD"); env != nullptr && std::string(env) == "scalar") {
    return &scalar_table();
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

const KernelTable*& slot() {
  static const KernelTable* table = resolve();
  return table;
}

std::size_t threads_from_env() {
  if (const char* env = std::getenv("GLSSL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::atomic<std::size_t>& threads_slot() {
  static std::atomic<std::size_t> n{threads_from_env()};
  return n;
}

}  // namespace

const KernelTable& active() { return *slot(); }

void set_active(const KernelTable& table) { slot() = &table; }

std::size_t thread_count() { return threads_slot().load(std::memory_order_relaxed); }

void set_thread_count(std::size_t n) {
  threads_slot().store(n == 0 ? 1 : n, std::memory_order_relaxed);
}

}  // namespace glssl::kernels
