/* Copyright 2026 The piep Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace piep {

// Deterministic randomness. The standard <random> distributions are
// implementation-defined, which would make frozen test expectations and
// byte-identical artifacts depend on the standard library. Everything here
// is pinned: splitmix64 streams plus explicit uniform / Box-Muller
// transforms, identical on every platform.

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// FNV-1a 64-bit, used for content hashes (input provenance, stream keys).
inline constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ kStreamSalt)) {}

  // Derives an independent stream from (seed, key). Records generated from
  // distinct keys do not share state, so grid cells can be produced in any
  // order, or in parallel, with identical results.
  static Rng stream(std::uint64_t seed, std::uint64_t key) {
    return Rng(splitmix64(seed) ^ splitmix64(key * 0x9E3779B97F4A7C15ULL));
  }

  std::uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller. The pair is consumed eagerly so the
  // draw count per call is fixed (two words per two normals).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    // Guard the log: uniform01 can return exactly 0.
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Log-normal with the given median and log-space sigma. A zero median is
  // a degenerate but legal request and yields exactly zero.
  double lognormal_median(double median, double sigma) {
    if (median <= 0.0) return 0.0;
    return median * std::exp(sigma * normal());
  }

 private:
  static constexpr std::uint64_t kStreamSalt = 0xA24BAED4963EE407ULL;
  static constexpr double kPi = 3.14159265358979323846;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace piep
