#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "ug/common.hpp"

namespace ug {

// 64-bit finalizer used by the splitmix64 generator.
inline u64 mix64(u64 z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline u64 fnv1a64(std::string_view s) {
  u64 h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

// Deterministic, splittable pseudo-random source (splitmix64 stream).
//
// Every component of a run draws from its own stream derived by hashing a
// label into the parent state, so results are fully determined by the root
// seed plus the label path, independent of platform or library version.
struct Rng {
  u64 state = 0;

  Rng() = default;
  explicit Rng(u64 seed) : state(seed) {}

  u64 next_u64() {
    state += 0x9e3779b97f4a7c15ull;
    return mix64(state);
  }

  // Child stream seeded from the current state and a label; does not
  // advance this stream.
  Rng split(std::string_view label) const { return Rng(mix64(state ^ fnv1a64(label))); }

  Rng split(u64 salt) const { return Rng(mix64(state ^ mix64(salt + 0x42d5680ca437fe1bull))); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n).
  u64 below(u64 n) {
    if (n == 0) throw contract_error("Rng::below: n must be positive");
    u64 limit = ~u64(0) - ~u64(0) % n;
    u64 v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  // Standard normal via Box-Muller; avoids library distributions so the
  // stream is identical across standard library implementations.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }
};

// Documented derivation of per-component seeds from the run's root seed.
inline u64 derive_seed(u64 root_seed, std::string_view component) {
  return mix64(root_seed ^ fnv1a64(component));
}

}  // namespace ug
