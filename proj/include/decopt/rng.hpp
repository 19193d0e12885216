#pragma once

// Counter-based random streams. A stream is addressed by its lineage, so draws
// do not depend on evaluation order or thread schedule.

#include "decopt/common.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace decopt {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Position of a draw inside a run: outer iteration and batch member.
struct Lineage {
  std::uint64_t iter = 0;
  std::uint64_t batch = 0;
};

enum class StreamDomain : std::uint64_t { primal = 1, dual = 2, generic = 3 };

inline constexpr std::uint64_t stream_key(std::uint64_t master_seed, StreamDomain domain,
                                          std::uint64_t node, Lineage lineage) {
  std::uint64_t h = splitmix64(master_seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(domain));
  h = splitmix64(h ^ node);
  h = splitmix64(h ^ lineage.iter);
  return splitmix64(h ^ lineage.batch);
}

/// UniformRandomBitGenerator whose i-th output is splitmix64(key + i * golden).
class CounterRng {
 public:
  using result_type = std::uint64_t;
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return splitmix64(key_ + (counter_++) * kGolden); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Isotropic Gaussian with E||zeta||^2 = sigma^2 (per-coordinate variance sigma^2/n).
inline Vector gaussian_noise(std::uint64_t key, int n, double sigma) {
  Vector out = Vector::Zero(n);
  if (sigma == 0.0 || n == 0) return out;
  CounterRng rng(key);
  std::normal_distribution<double> normal(0.0, sigma / std::sqrt(static_cast<double>(n)));
  for (int i = 0; i < n; ++i) out[i] = normal(rng);
  return out;
}

}  // namespace decopt
