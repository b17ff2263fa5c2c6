// Copyright 2026 The adpfl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace adpfl {

using Rng = std::mt19937_64;

inline constexpr double kPi = 3.14159265358979323846;

// SplitMix64 finalizer; decorrelates structured inputs such as
// (seed, round, client) triples.
inline uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Labels for the independent substreams derived from one experiment seed.
enum class Stream : uint64_t {
  kSiteShift = 0x01,
  kSiteData = 0x02,
  kTestData = 0x03,
  kModelInit = 0x04,
  kShuffle = 0x05,
  kNoise = 0x06,
};

// Deterministic stream seed from (seed, purpose, round, client). Every
// source of randomness in a simulation is keyed this way, so clients can
// run in any order (or concurrently) without changing results.
inline uint64_t derive_seed(uint64_t seed, Stream stream, uint64_t a = 0,
                            uint64_t b = 0) {
  uint64_t h = mix64(seed);
  h = mix64(h ^ static_cast<uint64_t>(stream));
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  return h;
}

inline Rng make_stream(uint64_t seed, Stream stream, uint64_t a = 0,
                       uint64_t b = 0) {
  return Rng(derive_seed(seed, stream, a, b));
}

// Uniform double in the open interval (0,1) at 53-bit resolution. Built
// from raw engine output so sequences do not depend on the standard
// library's distribution implementations.
inline double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform_range(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_open01(rng);
}

inline uint64_t uniform_below(Rng& rng, uint64_t n) { return rng() % n; }

// Box-Muller; consumes two engine draws per sample.
inline double gaussian(Rng& rng) {
  const double u1 = uniform_open01(rng);
  const double u2 = uniform_open01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

// Fisher-Yates with a modulo index draw, so shuffles are identical across
// standard-library implementations.
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_below(rng, i)]);
  }
}

}  // namespace adpfl
