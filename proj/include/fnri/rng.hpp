#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fnri {

// Deterministic RNG. mt19937_64 output is fully specified by the standard and
// all distributions here are implemented explicitly, so every stream is
// bit-reproducible across platforms and compilers (std::*_distribution is not).
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Gumbel(0,1): -log(-log(u)), u in (0, 1].
  double gumbel() {
    double u = 1.0 - uniform();
    return -std::log(-std::log(u));
  }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) { return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n)); }

  // Derive an independent stream from (base, path...). Used so that parallel
  // and serial dataset generation produce identical examples.
  static uint64_t mix(uint64_t base, std::initializer_list<uint64_t> path) {
    uint64_t s = base;
    for (uint64_t p : path) s = splitmix64(s ^ (p + 0x9E3779B97F4A7C15ULL));
    return splitmix64(s);
  }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace fnri
