//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_UTIL_RNG_HPP
#define MSDIFF_UTIL_RNG_HPP

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace msdiff {

/// splitmix64 step; used to derive child seeds from a root seed so that
/// independent streams (per step, per sample, per worker) never share state.
inline std::uint64_t splitmix64(std::uint64_t &state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Hash-combine a root seed with stream identifiers. Deterministic and
/// order-sensitive: derive_seed(s, a, b) != derive_seed(s, b, a) in general.
template <typename... Ids>
std::uint64_t derive_seed(std::uint64_t root, Ids... ids) {
  std::uint64_t state = root;
  (void)splitmix64(state);
  ((state ^= static_cast<std::uint64_t>(ids) + 0x9e3779b97f4a7c15ULL +
             (state << 6) + (state >> 2),
    (void)splitmix64(state)),
   ...);
  std::uint64_t copy = state;
  return splitmix64(copy);
}

/// Seeded random source. Wraps mt19937_64 but performs all value extraction
/// itself; output is reproducible across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(engine_()) * n) >> 64);
  }

  /// Sample an index from an unnormalized non-negative weight vector by CDF
  /// walk. Returns the last index with positive weight if rounding pushes the
  /// draw past the total. Returns SIZE_MAX when all weights are zero.
  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) return SIZE_MAX;
    double u = uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = SIZE_MAX;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] > 0.0) {
        acc += weights[i];
        last_positive = i;
        if (u < acc) return i;
      }
    }
    return last_positive;
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T> &v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace msdiff

#endif  // MSDIFF_UTIL_RNG_HPP
