#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace kelp {

// Deterministic random source. The engine is mt19937_64 (bit-exact by
// standard), and all distributions are derived here by hand so that streams
// are reproducible across standard libraries. Every stochastic routine in
// the library takes one of these by reference; there is no global state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Unbiased uniform integer on [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller without a cached spare: always consumes two draws, so the
  // stream position is a pure function of call count.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Derived stream for a labelled sub-task (e.g. per-step batch assembly).
  // Mixing follows splitmix64 so nearby labels give unrelated streams.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t label) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (label + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  Rng fork(std::uint64_t label) { return Rng(mix(next_u64(), label)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace kelp
