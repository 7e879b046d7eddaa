#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace cmo {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Seed for a named substream keyed by a counter tuple. Streams with distinct
/// (master, tag, counters) are statistically independent, and a stream only
/// depends on its own key, so work can be split across workers in any order.
inline std::uint64_t stream_seed(std::uint64_t master, std::string_view tag,
                                 std::initializer_list<std::uint64_t> counters) {
  std::uint64_t h = mix64(master ^ fnv1a(tag));
  for (std::uint64_t c : counters) h = mix64(h ^ mix64(c + 0x632BE59BD9B4E019ULL));
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng(std::uint64_t master, std::string_view tag,
      std::initializer_list<std::uint64_t> counters)
      : engine_(stream_seed(master, tag, counters)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace cmo
