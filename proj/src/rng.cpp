#include "refi/rng.hpp"

#include <stdexcept>

namespace refi {

std::uint64_t Rng::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::derive_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x8000000080003A65ULL;
  for (std::uint64_t p : parts) h = mix(h ^ (p + 0x9E3779B97F4A7C15ULL));
  return h;
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  double s = 0.0;
  for (int i = 0; i < 12; ++i) s += uniform();
  return s - 6.0;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  if ((n & (n - 1)) == 0) return next_u64() & (n - 1);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

std::vector<std::uint32_t> Rng::sample(const std::vector<std::uint32_t>& pool, std::size_t k) {
  if (k > pool.size()) throw std::invalid_argument("Rng::sample: k exceeds pool size");
  std::vector<std::uint32_t> work = pool;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(below(work.size() - i));
    std::swap(work[i], work[j]);
  }
  work.resize(k);
  return work;
}

std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace refi
