#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace xfer {

// Deterministic random source. All distributions are implemented by hand on
// top of mt19937_64 so that a given seed yields the same stream on every
// platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    const double u = (gen_() >> 11) * 0x1.0p-53;  // 53-bit mantissa in [0,1)
    return lo + (hi - lo) * u;
  }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  // Box-Muller, caching the second deviate.
  double normal(double mean, double stddev) {
    if (has_cached_) {
      has_cached_ = false;
      return mean + stddev * cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform(0.0, 1.0);
    const double u2 = uniform(0.0, 1.0);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return mean + stddev * r * std::cos(a);
  }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Seed-determined permutation of {0, .., n-1}.
  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    shuffle(p);
    return p;
  }

 private:
  std::mt19937_64 gen_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// Derives an independent stream seed from a root seed and a purpose label, so
// unrelated consumers (init, pairing, shuffling, ...) never share a stream.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const char c : purpose) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  std::uint64_t z = root ^ h;
  z += 0x9e3779b97f4a7c15ull;  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index) {
  return derive_seed(root ^ (0x9e3779b97f4a7c15ull * (index + 1)), purpose);
}

}  // namespace xfer
