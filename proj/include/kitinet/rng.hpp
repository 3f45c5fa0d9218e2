#pragma once

// Seeded, splittable randomness. Every stochastic routine in the library
// draws from an explicit Rng so that runs are reproducible from a single
// 64-bit seed. Substream keys are derived by hashing (seed, tag, tag, ...)
// with splitmix64; the uniform and Gaussian transforms are hand-rolled
// because the std:: distributions are not bit-portable across standard
// library implementations.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace kitinet {

inline constexpr double kTwoPi = 6.28318530717958647692528676655900577;

// Generator pipeline identifier, recorded in run metadata.
inline constexpr std::string_view kRngFamily = "mt19937_64/box-muller";

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Hash-derived stream key. child(tag) yields an independent substream, so
// (seed, epoch, layer, row) style derivations never share state.
struct RngKey {
  std::uint64_t state = 0;

  static RngKey root(std::uint64_t seed) { return RngKey{splitmix64(seed)}; }

  RngKey child(std::uint64_t tag) const {
    return RngKey{splitmix64(state ^ splitmix64(tag + 0x9E3779B97F4A7C15ULL))};
  }
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  explicit Rng(RngKey key) : gen_(key.state) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53-bit resolution
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // (0, 1]
  double uniform_open0() { return 1.0 - uniform01(); }

  // uniform integer in [0, n), n >= 1
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = gen_();
    while (r >= limit) r = gen_();
    return r % n;
  }

  // standard normal, Box-Muller (cosine branch)
  double gaussian() {
    const double u1 = uniform_open0();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace kitinet
