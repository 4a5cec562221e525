#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace selfrobust {

// Deterministic, platform-independent randomness. xoshiro256++ seeded through
// splitmix64, so the bit stream only depends on the seed, never on the
// standard library's distribution implementations.
//
// Seed derivation for sub-experiments: derive_seed(master, tag) hashes the tag
// (FNV-1a) into the master seed and remixes. Every parallel run (one per
// corruption strength, held-in class, grid cell, ...) draws from its own
// derived stream, so worker scheduling order cannot change results.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  std::uint64_t s = master ^ fnv1a64(tag);
  return splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t s = master ^ (0x9e3779b97f4a7c15ULL * (index + 1));
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0,1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // [0,n), unbiased (Lemire's multiply-shift with rejection).
  std::int64_t uniform_int(std::int64_t n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    const std::uint64_t range = static_cast<std::uint64_t>(n);
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * range;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < range) {
      const std::uint64_t t = (-range) % range;
      while (lo < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * range;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::int64_t>(m >> 64);
  }

  // N(0,1) via Box-Muller; the spare keeps draws per call at one on average.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Knuth's product method below mean 64, rounded normal approximation above.
  std::int64_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 64.0) {
      const double limit = std::exp(-mean);
      std::int64_t k = 0;
      double p = 1.0;
      do {
        ++k;
        p *= uniform();
      } while (p > limit);
      return k - 1;
    }
    const double draw = mean + std::sqrt(mean) * normal();
    return draw <= 0.0 ? 0 : static_cast<std::int64_t>(std::llround(draw));
  }

  template <typename It>
  void shuffle(It first, It last) {
    const std::int64_t n = last - first;
    for (std::int64_t i = n - 1; i > 0; --i) {
      const std::int64_t j = uniform_int(i + 1);
      std::swap(first[i], first[j]);
    }
  }

  template <typename Container>
  void shuffle(Container& c) {
    shuffle(c.begin(), c.end());
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace selfrobust
