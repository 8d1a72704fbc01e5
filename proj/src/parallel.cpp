#include "lumen/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace lumen {
namespace {

std::atomic<bool> g_deterministic{false};

int env_threads() {
  const char* s = std::getenv("LUMEN_THREADS");
  if (!s || !*s) return 0;
  try {
    return std::max(1, std::stoi(s));
  } catch (...) {
    return 0;
  }
}

}  // namespace

void set_deterministic(bool on) { g_deterministic = on; }
bool deterministic() { return g_deterministic; }

int thread_count() {
  if (g_deterministic) return 1;
  int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  int cap = env_threads();
  return cap > 0 ? std::min(cap, hw) : hw;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk) {
  if (n == 0) return;
  std::size_t workers = static_cast<std::size_t>(thread_count());
  workers = std::min(workers, std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk)));
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t b = w * chunk;
    std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace lumen
