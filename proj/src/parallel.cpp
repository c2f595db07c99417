#include "refi/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace refi {

namespace {
std::atomic<int> g_override{-1};

int env_threads() {
  if (const char* env = std::getenv("REFI_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}
}  // namespace

int max_threads() {
  const int ov = g_override.load();
  if (ov > 0) return ov;
  static const int from_env = env_threads();
  return from_env;
}

void set_max_threads(int n) { g_override.store(n > 0 ? n : -1); }

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& chunk_fn,
                  std::size_t min_parallel) {
  if (end <= begin) return;
  const std::size_t count = end - begin;
  const int threads = max_threads();
  if (threads <= 1 || count < min_parallel) {
    chunk_fn(begin, end);
    return;
  }
  const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  const std::size_t chunk = (count + t - 1) / t;
  std::vector<std::thread> workers;
  workers.reserve(t - 1);
  std::size_t lo = begin + chunk;
  for (std::size_t w = 1; w < t && lo < end; ++w, lo += chunk) {
    const std::size_t hi = std::min(end, lo + chunk);
    workers.emplace_back([&chunk_fn, lo, hi] { chunk_fn(lo, hi); });
  }
  chunk_fn(begin, std::min(end, begin + chunk));
  for (auto& th : workers) th.join();
}

}  // namespace refi
