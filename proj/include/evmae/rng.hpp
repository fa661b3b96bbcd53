#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace evmae {

// SplitMix64 (Steele, Lea & Flood 2014). Every stochastic draw in this
// project comes from a keyed SplitMix64 stream, so any value is
// reproducible from its key alone and independent of evaluation order.
struct SplitMix64 {
  uint64_t state = 0;

  constexpr SplitMix64() = default;
  explicit constexpr SplitMix64(uint64_t seed) : state(seed) {}

  constexpr uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [0, bound). Unbiased via rejection sampling.
  uint64_t next_below(uint64_t bound) {
    const uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  // Standard normal via Box-Muller; consumes two draws.
  double next_normal() {
    const double u1 =
        static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }
};

inline constexpr uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Combines key parts into a stream seed; each part is fully avalanched.
inline constexpr uint64_t key_mix(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const uint64_t p : parts) {
    SplitMix64 s(h ^ p);
    h = s.next();
  }
  return h;
}

// Partial Fisher-Yates: k distinct values drawn uniformly from [0, n).
inline std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k,
                                                       SplitMix64& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  for (int64_t i = 0; i < k; ++i) {
    const int64_t j =
        i + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(k));
  return idx;
}

}  // namespace evmae
