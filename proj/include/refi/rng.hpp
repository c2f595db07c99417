#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace refi {

// Counter-based SplitMix64 stream. Output i of stream `key` is
//
//   z = key + (i+1) * 0x9E3779B97F4A7C15
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   out = z ^ (z >> 31)
//
// and nothing else, so fixtures replay exactly across runs and platforms.
// Derived quantities likewise avoid libm: uniforms take the top 53 bits,
// bounded integers use rejection, normals are an Irwin-Hall sum of twelve
// uniforms (adds only). Streams for distinct purposes are keyed through
// derive_key so no two consumers share a counter sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  static std::uint64_t mix(std::uint64_t z);
  static std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts);

  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double normal();                        // mean 0, stddev 1 (Irwin-Hall 12)
  std::uint64_t below(std::uint64_t n);   // unbiased integer in [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct elements of pool, order randomized (partial Fisher-Yates).
  std::vector<std::uint32_t> sample(const std::vector<std::uint32_t>& pool, std::size_t k);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t hash_str(std::string_view s);  // FNV-1a 64, for names in keys

}  // namespace refi
