// Copyright 2026 The dpguard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPGUARD_RNG_H_
#define DPGUARD_RNG_H_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace dpguard {

// SplitMix64 finalizer. Used to turn (seed, nonce) pairs into independent
// generator seeds.
inline uint64_t MixBits(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic pseudo-random source owned by a single call. Two instances
// built from the same (seed, nonce) produce identical streams on every
// platform, since only the raw mt19937_64 output is consumed.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t nonce = 0)
      : engine_(MixBits(MixBits(seed) ^ nonce)) {}

  uint64_t NextBits() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in (0, 1]; safe to pass to log().
  double UniformPositive() { return 1.0 - Uniform(); }

  // Exponential(1) by inversion.
  double Exponential() { return -std::log(UniformPositive()); }

  // Uniform integer in [0, n), n > 0. Rejection sampling keeps it unbiased.
  uint64_t UniformIndex(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

// Inverse-CDF draw from a discrete distribution given by `probabilities`
// (assumed non-negative and summing to 1). Rounding slack in the cumulative
// sum falls to the last index with positive mass.
inline size_t SampleIndex(std::span<const double> probabilities, Rng& rng) {
  const double u = rng.Uniform();
  double cumulative = 0.0;
  size_t last_positive = 0;
  for (size_t j = 0; j < probabilities.size(); ++j) {
    if (probabilities[j] <= 0.0) continue;
    last_positive = j;
    cumulative += probabilities[j];
    if (u < cumulative) return j;
  }
  return last_positive;
}

}  // namespace dpguard

#endif  // DPGUARD_RNG_H_
