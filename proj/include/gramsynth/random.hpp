// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random number generation. mt19937_64 gives a bit-exact
// engine across platforms; the value transforms live here so that no
// implementation-defined distribution code enters the reproducibility
// contract.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gramsynth {

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  long uniform_int(long lo, long hi) {  // inclusive bounds
    return lo + static_cast<long>(uniform() * static_cast<double>(hi - lo + 1));
  }

  // Standard normal via Box-Muller; two uniforms per draw, no cached spare.
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream; splitmix64 scrambling keeps nearby ids apart.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t z = seed_mix_ + stream * 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

private:
  Rng(std::uint64_t seed, int) : engine_(seed) {}

  std::mt19937_64 engine_;
  std::uint64_t seed_mix_ = engine_();  // consumed once, decorrelates forks from draws
};

}  // namespace gramsynth
