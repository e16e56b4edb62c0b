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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wmens/errors.hpp"
#include "wmens/rng.hpp"

namespace wmens {

using Token = std::uint32_t;

// Neumaier-compensated running sum. Key-space averages add up to 8! terms
// and must stay accurate to ~1e-15.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

inline constexpr double kProbabilityTolerance = 1e-9;

/// A categorical distribution over a vocabulary of N >= 2 tokens.
///
/// Construction validates non-negativity and that entries sum to one within
/// kProbabilityTolerance, then renormalizes. Use from_weights() for
/// unnormalized input.
class TokenDist {
 public:
  explicit TokenDist(std::vector<double> probs) : probs_(std::move(probs)) {
    const double total = checked_total(probs_);
    if (std::abs(total - 1.0) > kProbabilityTolerance) {
      throw ParameterError("probabilities sum to " + std::to_string(total) +
                           ", not 1");
    }
    if (total != 1.0) {
      for (double& p : probs_) p /= total;
    }
  }

  static TokenDist from_weights(std::vector<double> weights) {
    const double total = checked_total(weights);
    if (!(total > 0.0)) throw ParameterError("weights must have positive sum");
    for (double& w : weights) w /= total;
    return adopt(std::move(weights));
  }

  static TokenDist uniform(std::size_t n) {
    if (n < 2) throw ParameterError("vocabulary size must be at least 2");
    return adopt(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  static TokenDist one_hot(std::size_t n, Token at) {
    if (n < 2) throw ParameterError("vocabulary size must be at least 2");
    if (at >= n) throw ParameterError("one-hot index outside vocabulary");
    std::vector<double> p(n, 0.0);
    p[at] = 1.0;
    return adopt(std::move(p));
  }

  // Takes ownership of a vector already known to be a valid distribution
  // (output of a reweight or a convex combination). No renormalization.
  static TokenDist adopt(std::vector<double> probs) {
    TokenDist d;
    d.probs_ = std::move(probs);
    return d;
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }
  const std::vector<double>& vector() const noexcept { return probs_; }

  friend bool operator==(const TokenDist&, const TokenDist&) = default;

 private:
  TokenDist() = default;

  static double checked_total(const std::vector<double>& v) {
    if (v.size() < 2) throw ParameterError("vocabulary size must be at least 2");
    CompensatedSum total;
    for (double p : v) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw ParameterError("probabilities must be finite and non-negative");
      }
      total.add(p);
    }
    return total.value();
  }

  std::vector<double> probs_;
};

/// Shannon entropy in nats, with 0 ln 0 = 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

inline double entropy(const TokenDist& p) {
  return std::min(entropy(p.probs()), std::log(static_cast<double>(p.size())));
}

/// Collision probability sum p^2.
inline double collision_mass(std::span<const double> p) {
  double c = 0.0;
  for (double x : p) c += x * x;
  return c;
}

inline double collision_mass(const TokenDist& p) { return collision_mass(p.probs()); }

// lambda * q + (1 - lambda) * p, evaluated as p + lambda (q - p) so that
// mix(p, p, lambda) == p bit-for-bit.
inline double mix_entry(double p, double q, double lambda) noexcept {
  return p + lambda * (q - p);
}

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ParameterError("lambda must lie in [0, 1]");
  }
}

/// lambda * Q + (1 - lambda) * P.
inline TokenDist mix(const TokenDist& p, const TokenDist& q, double lambda) {
  if (p.size() != q.size()) throw DimensionError("mix: vocabulary sizes differ");
  check_lambda(lambda);
  if (lambda == 0.0) return p;
  if (lambda == 1.0) return q;
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mix_entry(p[i], q[i], lambda);
  return TokenDist::adopt(std::move(out));
}

// Inverse CDF over the natural index order. `u` in [0, 1). If rounding leaves
// u above the last cumulative value the last positive-mass index is returned.
inline std::size_t inverse_cdf(std::span<const double> p, double u) {
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    cumulative += p[i];
    last_positive = i;
    if (u < cumulative) return i;
  }
  return last_positive;
}

inline Token sample_token(const TokenDist& p, double u) {
  return static_cast<Token>(inverse_cdf(p.probs(), u));
}

inline Token sample_token(const TokenDist& p, Rng& rng) {
  return sample_token(p, rng.uniform());
}

// Symmetric Dirichlet(beta) sample over `n` categories, normalized in log
// space so that very small concentrations do not underflow to all zeros.
inline std::vector<double> sample_dirichlet(std::size_t n, double beta, Rng& rng) {
  if (!(beta > 0.0)) throw ParameterError("Dirichlet concentration must be > 0");
  std::vector<double> logs(n);
  for (double& l : logs) l = rng.log_gamma_variate(beta);
  const double top = *std::max_element(logs.begin(), logs.end());
  double total = 0.0;
  for (double& l : logs) {
    l = std::exp(l - top);
    total += l;
  }
  for (double& l : logs) l /= total;
  return logs;
}

struct MarkovSourceParams {
  std::size_t vocab = 1000;
  double beta = 1.0;
  std::uint64_t seed = 1;
  // Number of tokens with non-zero probability in each row; 0 means the full
  // vocabulary. Rows draw their support uniformly without replacement.
  std::size_t support = 8;
};

/// Order-1 Markov chain standing in for a language model. Row `r` is the
/// next-token distribution after token `r`; the first token is drawn from a
/// uniform initial distribution.
class MarkovSource {
 public:
  explicit MarkovSource(const MarkovSourceParams& params)
      : params_(params), initial_(TokenDist::uniform(params.vocab)) {
    if (!(params.beta > 0.0)) throw ParameterError("beta must be > 0");
    if (params.support > params.vocab) {
      throw ParameterError("row support cannot exceed the vocabulary size");
    }
    const std::size_t n = params.vocab;
    const std::size_t k = params.support == 0 ? n : params.support;
    rows_.reserve(n);
    supports_.resize(n);
    std::vector<Token> pool(n);
    for (std::size_t r = 0; r < n; ++r) {
      Rng rng(derive_seed(params.seed, r));
      std::vector<Token>& support = supports_[r];
      if (k == n) {
        support.resize(n);
        for (std::size_t i = 0; i < n; ++i) support[i] = static_cast<Token>(i);
      } else {
        for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<Token>(i);
        for (std::size_t i = 0; i < k; ++i) {
          std::swap(pool[i], pool[i + rng.below(n - i)]);
        }
        support.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(support.begin(), support.end());
      }
      const std::vector<double> weights = sample_dirichlet(k, params.beta, rng);
      std::vector<double> row(n, 0.0);
      for (std::size_t i = 0; i < k; ++i) row[support[i]] = weights[i];
      rows_.push_back(TokenDist::from_weights(std::move(row)));
      // Drop tokens whose weight underflowed so the support lists only
      // positive-mass tokens.
      std::erase_if(support, [&](Token t) { return rows_.back()[t] == 0.0; });
    }
  }

  const MarkovSourceParams& params() const noexcept { return params_; }
  std::size_t vocab() const noexcept { return params_.vocab; }
  const TokenDist& initial() const noexcept { return initial_; }
  const TokenDist& row(Token previous) const { return rows_.at(previous); }

  // Ascending list of tokens with positive probability after `previous`.
  std::span<const Token> support(Token previous) const { return supports_.at(previous); }

  double mean_row_entropy() const {
    double total = 0.0;
    for (const TokenDist& r : rows_) total += entropy(r);
    return total / static_cast<double>(rows_.size());
  }

 private:
  MarkovSourceParams params_;
  TokenDist initial_;
  std::vector<TokenDist> rows_;
  std::vector<std::vector<Token>> supports_;
};

/// Synthetic source with Dirichlet(beta) rows over the full vocabulary.
inline MarkovSource make_markov_source(std::size_t n, double beta, std::uint64_t seed) {
  if (n < 2) throw ParameterError("vocabulary size must be at least 2");
  if (!(beta > 0.0)) throw ParameterError("beta must be > 0");
  return MarkovSource(MarkovSourceParams{n, beta, seed, 0});
}

}  // namespace wmens
