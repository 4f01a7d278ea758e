#include "flexquant/parallel.hpp"

#include <atomic>

namespace flexquant {

namespace {
std::atomic<std::size_t> g_max_threads{1};
}

void set_max_threads(std::size_t n) {
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  g_max_threads.store(n);
}

std::size_t max_threads() { return g_max_threads.load(); }

}  // namespace flexquant
