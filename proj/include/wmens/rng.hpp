// Copyright 2026 The wmens Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
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

namespace wmens {

// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// Derives a child seed from a parent seed and a list of integer labels
// (trial index, stream role, ...). Used for per-trial, per-role streams.
template <typename... Labels>
constexpr std::uint64_t derive_seed(std::uint64_t parent, Labels... labels) noexcept {
  std::uint64_t h = mix64(parent ^ 0x243f6a8885a308d3ULL);
  ((h = mix64(h + kGolden * (static_cast<std::uint64_t>(labels) + 1))), ...);
  return h;
}

// Unbiased integer in [0, bound) from a 64-bit word source (Lemire's
// multiply-and-reject). `next` is called until the draw is accepted.
template <typename NextWord>
std::uint64_t bounded_draw(std::uint64_t bound, NextWord&& next) {
  const unsigned __int128 full = static_cast<unsigned __int128>(next()) * bound;
  auto low = static_cast<std::uint64_t>(full);
  auto high = static_cast<std::uint64_t>(full >> 64);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      const unsigned __int128 again = static_cast<unsigned __int128>(next()) * bound;
      low = static_cast<std::uint64_t>(again);
      high = static_cast<std::uint64_t>(again >> 64);
    }
  }
  return high;
}

// Deterministic random stream. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; all conversions to real-valued variates
// are done here so results do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1).
  double uniform_open() {
    return (static_cast<double>(engine_() >> 12) + 0.5) * 0x1.0p-52;
  }

  std::uint64_t below(std::uint64_t bound) {
    return bounded_draw(bound, [this] { return engine_(); });
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal, Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Natural log of a Gamma(shape, 1) variate (Marsaglia-Tsang). Shapes below
  // one use Gamma(a) = Gamma(a + 1) * U^(1/a), kept in log space so tiny
  // shapes do not underflow.
  double log_gamma_variate(double shape) {
    if (shape < 1.0) {
      return log_gamma_variate(shape + 1.0) + std::log(uniform_open()) / shape;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open();
      if (u < 1.0 - 0.0331 * x * x * x * x ||
          std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
        return std::log(d * v);
      }
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace wmens
