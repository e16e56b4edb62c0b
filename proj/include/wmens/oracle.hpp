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
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wmens/errors.hpp"
#include "wmens/keys.hpp"
#include "wmens/prob.hpp"
#include "wmens/reweight.hpp"
#include "wmens/rng.hpp"
#include "wmens/scheme.hpp"

// Exact and Monte-Carlo ground truth for the reweight families: every
// expectation over keys here is computed by visiting the whole key space
// with its probability, independently of the PRF-driven key derivation.
namespace wmens::oracle {

inline constexpr std::size_t kPartitionCap = 16;    // 2^16 partitions
inline constexpr std::size_t kPermutationCap = 8;   // 8! permutations
inline constexpr double kExactTolerance = 1e-12;

// Which keys make up the key space being averaged over.
enum class KeySpace {
  kFull,
  // Channel family with the permutation fixed to the identity; only the
  // channel selection is random.
  kChannelSelectionOnly,
};

inline std::uint64_t factorial(std::size_t n) {
  std::uint64_t f = 1;
  for (std::size_t i = 2; i <= n; ++i) f *= i;
  return f;
}

inline std::uint64_t key_space_size(const SchemeConfig& cfg, std::size_t n,
                                    KeySpace space = KeySpace::kFull) {
  switch (cfg.family) {
    case Family::kTournament: return std::uint64_t{1} << n;
    case Family::kDipmark: return factorial(n);
    case Family::kChannel:
      return (space == KeySpace::kFull ? factorial(n) : 1) * static_cast<std::uint64_t>(cfg.channels);
  }
  return 0;
}

inline void check_cap(const SchemeConfig& cfg, std::size_t n, KeySpace space = KeySpace::kFull) {
  const bool partitions = cfg.family == Family::kTournament;
  const bool fixed_perm = cfg.family == Family::kChannel && space == KeySpace::kChannelSelectionOnly;
  const std::size_t cap = partitions ? kPartitionCap : kPermutationCap;
  if (!fixed_perm && n > cap) {
    throw EnumerationCapError("key space of " + std::string(to_string(cfg.family)) + " at N=" +
                              std::to_string(n) + " exceeds the enumeration cap (N <= " +
                              std::to_string(cap) + "); use expected_green_mc instead");
  }
}

/// Calls visit(layer, probability) once per key.
template <typename Visit>
void for_each_key(const SchemeConfig& cfg, std::size_t n, Visit&& visit,
                  KeySpace space = KeySpace::kFull) {
  check_cap(cfg, n, space);
  const double weight = 1.0 / static_cast<double>(key_space_size(cfg, n, space));
  if (cfg.family == Family::kTournament) {
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
      std::vector<std::uint8_t> flags(n);
      for (std::size_t t = 0; t < n; ++t) flags[t] = (mask >> t) & 1u;
      visit(KeyedLayer::tournament(GreenPartition(std::move(flags))), weight);
    }
    return;
  }
  if (cfg.family == Family::kChannel) check_channel_count(cfg.channels, n);
  std::vector<Token> order(n);
  std::iota(order.begin(), order.end(), Token{0});
  do {
    if (cfg.family == Family::kDipmark) {
      visit(KeyedLayer::dipmark(KeyedPermutation(order), cfg.alpha), weight);
    } else {
      for (int s = 0; s < cfg.channels; ++s) {
        visit(KeyedLayer::channel(KeyedPermutation(order), cfg.channels, s), weight);
      }
    }
  } while (space == KeySpace::kFull && std::next_permutation(order.begin(), order.end()));
}

/// Key-average statistics of F_lambda(P, k) for several strengths at once.
struct LambdaStatistics {
  double lambda = 1.0;
  std::vector<double> mean_dist;       // E_k[F_lambda(P, k)]
  double max_abs_bias = 0.0;           // ||mean_dist - P||_inf
  double mean_entropy_after = 0.0;     // E_k[H(F_lambda(P, k))]
  double mean_green_mass = 0.0;        // E_k[green mass of F_lambda(P, k)]
  double min_interpolation_margin = 0.0;  // min_k H(F_lambda) - lambda H(F) - (1-lambda) H(P)
  double min_green_bias_margin = 0.0;     // min_k green(F_lambda) - green(P)
};

inline std::vector<LambdaStatistics> enumerate_statistics(const SchemeConfig& cfg, const TokenDist& p,
                                                          std::span<const double> lambdas,
                                                          KeySpace space = KeySpace::kFull) {
  const std::size_t n = p.size();
  const std::vector<Token> support = detail::full_support(n);
  const double h_before = entropy(p.probs());

  struct Accumulator {
    std::vector<CompensatedSum> dist;
    CompensatedSum entropy, green;
    double interpolation = std::numeric_limits<double>::infinity();
    double green_bias = std::numeric_limits<double>::infinity();
  };
  std::vector<Accumulator> acc(lambdas.size());
  for (auto& a : acc) a.dist.resize(n);

  std::vector<double> reweighted(n), mixed(n);
  std::vector<std::size_t> order;
  for_each_key(
      cfg, n,
      [&](const KeyedLayer& layer, double w) {
        layer.reweight(support, p.probs(), reweighted, order);
        const double h_full = entropy(reweighted);
        const double green_before = layer.green_mass(support, p.probs());
        for (std::size_t li = 0; li < lambdas.size(); ++li) {
          const double lambda = lambdas[li];
          for (std::size_t t = 0; t < n; ++t) {
            mixed[t] = lambda == 1.0 ? reweighted[t] : mix_entry(p[t], reweighted[t], lambda);
          }
          Accumulator& a = acc[li];
          for (std::size_t t = 0; t < n; ++t) a.dist[t].add(w * mixed[t]);
          const double h = entropy(mixed);
          const double green = layer.green_mass(support, mixed);
          a.entropy.add(w * h);
          a.green.add(w * green);
          a.interpolation =
              std::min(a.interpolation, h - lambda * h_full - (1.0 - lambda) * h_before);
          a.green_bias = std::min(a.green_bias, green - green_before);
        }
      },
      space);

  std::vector<LambdaStatistics> out(lambdas.size());
  for (std::size_t li = 0; li < lambdas.size(); ++li) {
    LambdaStatistics& s = out[li];
    s.lambda = lambdas[li];
    s.mean_dist.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      s.mean_dist[t] = acc[li].dist[t].value();
      s.max_abs_bias = std::max(s.max_abs_bias, std::abs(s.mean_dist[t] - p[t]));
    }
    s.mean_entropy_after = acc[li].entropy.value();
    s.mean_green_mass = acc[li].green.value();
    s.min_interpolation_margin = acc[li].interpolation;
    s.min_green_bias_margin = acc[li].green_bias;
  }
  return out;
}

struct EnumerationReport {
  std::string scheme;
  std::size_t n = 0;
  std::uint64_t key_space_size = 0;
  double max_abs_bias = 0.0;
  double mean_entropy_after = 0.0;
  double mean_green_mass = 0.0;
  bool passed = false;
};

/// Exact check that E_k[F_lambda(P, k)] = P at cfg.lambda.
inline EnumerationReport verify_distortion_free(const SchemeConfig& cfg, const TokenDist& p,
                                                KeySpace space = KeySpace::kFull) {
  const double lambda = cfg.lambda;
  const LambdaStatistics s = enumerate_statistics(cfg, p, std::span(&lambda, 1), space).front();
  EnumerationReport r;
  r.scheme = cfg.label() + (space == KeySpace::kChannelSelectionOnly ? "-selection-only" : "");
  r.n = p.size();
  r.key_space_size = key_space_size(cfg, p.size(), space);
  r.max_abs_bias = s.max_abs_bias;
  r.mean_entropy_after = s.mean_entropy_after;
  r.mean_green_mass = s.mean_green_mass;
  r.passed = s.max_abs_bias < kExactTolerance;
  return r;
}

/// g(P) = 3/4 - (1/4) sum p^2 for the tournament with Bernoulli(1/2) flags.
inline double expected_green_closed_tournament(const TokenDist& p) {
  return 0.75 - 0.25 * collision_mass(p);
}

/// Exact key-average of the post-reweight green mass at cfg.lambda.
inline double expected_green_exact(const SchemeConfig& cfg, const TokenDist& p) {
  const double lambda = cfg.lambda;
  return enumerate_statistics(cfg, p, std::span(&lambda, 1)).front().mean_green_mass;
}

struct MonteCarloEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

// A key drawn uniformly from the family's key space.
inline KeyedLayer random_layer(const SchemeConfig& cfg, std::size_t n, Rng& rng) {
  if (cfg.family == Family::kTournament) {
    std::vector<std::uint8_t> flags(n);
    for (std::size_t t = 0; t < n; ++t) {
      if (t % 64 == 0) {
        const std::uint64_t word = rng.next_u64();
        for (std::size_t b = 0; b < 64 && t + b < n; ++b) flags[t + b] = (word >> b) & 1u;
      }
    }
    return KeyedLayer::tournament(GreenPartition(std::move(flags)));
  }
  std::vector<Token> order(n);
  std::iota(order.begin(), order.end(), Token{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  if (cfg.family == Family::kDipmark) return KeyedLayer::dipmark(KeyedPermutation(std::move(order)), cfg.alpha);
  const int selected = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.channels)));
  return KeyedLayer::channel(KeyedPermutation(std::move(order)), cfg.channels, selected);
}

/// Monte-Carlo estimate of the expected green ratio at cfg.lambda.
inline MonteCarloEstimate expected_green_mc(const SchemeConfig& cfg, const TokenDist& p,
                                            std::size_t trials, std::uint64_t seed) {
  if (trials < 1000) throw ParameterError("Monte-Carlo estimate needs at least 1000 trials");
  if (cfg.family == Family::kChannel) check_channel_count(cfg.channels, p.size());
  Rng rng(seed);
  const std::vector<Token> support = detail::full_support(p.size());
  std::vector<double> probs(p.size());
  EnsembleWorkspace ws;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    const KeyedLayer layer = random_layer(cfg, p.size(), rng);
    std::copy(p.probs().begin(), p.probs().end(), probs.begin());
    LayerStats stats;
    ensemble_in_place(cfg.lambda, std::span(&layer, 1), support, probs, ws, std::span(&stats, 1), false);
    sum += stats.green_mass;
    sum_sq += stats.green_mass * stats.green_mass;
  }
  const auto m = static_cast<double>(trials);
  const double mean = sum / m;
  const double var = std::max(sum_sq / m - mean * mean, 0.0) * m / (m - 1.0);
  return {mean, std::sqrt(var / m)};
}

/// Shift functional E_g[min(1, sum P g + alpha)] of the dipmark rule over
/// balanced partitions. Reported next to the exact value; the two disagree
/// when the pre-reweight green mass is below alpha.
inline double dipmark_shift_functional(const TokenDist& p, double alpha) {
  SchemeConfig cfg;
  cfg.family = Family::kDipmark;
  cfg.alpha = alpha;
  CompensatedSum total;
  const std::vector<Token> support = detail::full_support(p.size());
  for_each_key(cfg, p.size(), [&](const KeyedLayer& layer, double w) {
    total.add(w * std::min(1.0, layer.green_mass(support, p.probs()) + alpha));
  });
  return total.value();
}

struct EntropyTheoremReport {
  double entropy_before = 0.0;
  std::vector<double> lambdas;
  std::vector<double> mean_entropy_after;  // E_k[H(F_lambda)] per lambda
  std::vector<double> mean_green_after;    // E_k[g(F_lambda(P, k))] per lambda (if computed)
  double green_before = 0.0;               // g(P)
  // Margins; each inequality holds iff its margin is >= -tolerance.
  double entropy_decrease_margin = 0.0;    // H(P) - max_lambda E_k[H(F_lambda)]
  double lambda_monotone_margin = 0.0;     // min over increasing lambda pairs of the entropy drop
  double green_decrease_margin = 0.0;      // g(P) - max_lambda E_k[g(F_lambda)]
  double interpolation_margin = 0.0;       // min over keys and lambda
  bool green_checked = false;

  bool holds(double tolerance = kExactTolerance) const {
    return entropy_decrease_margin >= -tolerance && lambda_monotone_margin >= -tolerance &&
           interpolation_margin >= -tolerance && (!green_checked || green_decrease_margin >= -tolerance);
  }
};

// Nested enumeration (g evaluated at every post-reweight distribution) is
// attempted only up to this many inner * outer key visits.
inline constexpr std::uint64_t kNestedBudget = 50'000'000;

/// Entropy decrease, green-ratio decrease, entropy ordering in lambda and the
/// per-key interpolation inequality, all by exact enumeration.
inline EntropyTheoremReport verify_entropy_theorems(const SchemeConfig& cfg, const TokenDist& p,
                                                    std::vector<double> lambdas) {
  std::sort(lambdas.begin(), lambdas.end());
  const std::vector<LambdaStatistics> stats = enumerate_statistics(cfg, p, lambdas);
  EntropyTheoremReport r;
  r.entropy_before = entropy(p.probs());
  r.lambdas = lambdas;
  r.entropy_decrease_margin = std::numeric_limits<double>::infinity();
  r.interpolation_margin = std::numeric_limits<double>::infinity();
  r.lambda_monotone_margin = std::numeric_limits<double>::infinity();
  // lambda = 0 is the identity and holds with equality; it only enters the
  // margins when it is the sole grid point.
  const bool only_identity = lambdas.back() == 0.0;
  for (const LambdaStatistics& s : stats) {
    r.mean_entropy_after.push_back(s.mean_entropy_after);
    if (s.lambda == 0.0 && !only_identity) continue;
    r.entropy_decrease_margin = std::min(r.entropy_decrease_margin, r.entropy_before - s.mean_entropy_after);
    r.interpolation_margin = std::min(r.interpolation_margin, s.min_interpolation_margin);
  }
  for (std::size_t i = 1; i < stats.size(); ++i) {
    r.lambda_monotone_margin = std::min(r.lambda_monotone_margin,
                                        stats[i - 1].mean_entropy_after - stats[i].mean_entropy_after);
  }

  const std::uint64_t keys = key_space_size(cfg, p.size());
  if (keys * keys <= kNestedBudget) {
    SchemeConfig full = cfg;
    full.lambda = 1.0;
    r.green_checked = true;
    r.green_before = expected_green_exact(full, p);
    r.green_decrease_margin = std::numeric_limits<double>::infinity();
    const std::vector<Token> support = detail::full_support(p.size());
    for (double lambda : lambdas) {
      CompensatedSum mean_g;
      std::vector<double> out(p.size());
      std::vector<std::size_t> order;
      for_each_key(cfg, p.size(), [&](const KeyedLayer& layer, double w) {
        layer.reweight(support, p.probs(), out, order);
        std::vector<double> mixed(p.size());
        for (std::size_t t = 0; t < p.size(); ++t) mixed[t] = mix_entry(p[t], out[t], lambda);
        mean_g.add(w * expected_green_exact(full, TokenDist::from_weights(std::move(mixed))));
      });
      r.mean_green_after.push_back(mean_g.value());
      if (lambda == 0.0 && !only_identity) continue;
      r.green_decrease_margin = std::min(r.green_decrease_margin, r.green_before - mean_g.value());
    }
  }
  return r;
}

struct ConcavityProbe {
  double midpoint = 0.0;   // g((P + Q) / 2)
  double chord = 0.0;      // (g(P) + g(Q)) / 2
  double margin = 0.0;     // midpoint - chord
  bool holds = false;
};

/// Midpoint concavity of the exact expected green ratio between P and Q.
inline ConcavityProbe concavity_probe(const SchemeConfig& cfg, const TokenDist& p, const TokenDist& q) {
  if (p.size() != q.size()) throw DimensionError("concavity probe: vocabulary sizes differ");
  const TokenDist mid = mix(p, q, 0.5);
  ConcavityProbe r;
  r.midpoint = expected_green_exact(cfg, mid);
  r.chord = 0.5 * (expected_green_exact(cfg, p) + expected_green_exact(cfg, q));
  r.margin = r.midpoint - r.chord;
  r.holds = r.margin >= -kExactTolerance;
  return r;
}

/// (3/4 - exp(-H)/4) - g_closed(P); non-negative by Jensen.
inline double entropy_bound_slack(const TokenDist& p) {
  return 0.75 - 0.25 * std::exp(-entropy(p.probs())) - expected_green_closed_tournament(p);
}

inline bool entropy_bound_check(const TokenDist& p) {
  return entropy_bound_slack(p) >= -kExactTolerance;
}

/// Uniformly random point of the simplex (Dirichlet(1)).
inline TokenDist random_simplex(std::size_t n, Rng& rng) {
  return TokenDist::from_weights(sample_dirichlet(n, 1.0, rng));
}

/// Exactness gate for channel counts l > 2: enumerates the full key space at
/// N = l on a seeded battery of distributions and passes only if every one is
/// reproduced to kExactTolerance. Returns the worst report.
inline EnumerationReport channel_gate(int channels, std::uint64_t seed, int battery = 8) {
  SchemeConfig cfg;
  cfg.family = Family::kChannel;
  cfg.channels = channels;
  cfg.lambda = 1.0;
  const auto n = static_cast<std::size_t>(channels) * (channels == 2 ? 2 : 1);
  check_cap(cfg, n);
  Rng rng(seed);
  EnumerationReport worst;
  worst.passed = true;
  for (int i = 0; i < battery; ++i) {
    const EnumerationReport r = verify_distortion_free(cfg, random_simplex(n, rng));
    if (i == 0 || r.max_abs_bias > worst.max_abs_bias) worst = r;
  }
  worst.passed = worst.max_abs_bias < kExactTolerance;
  return worst;
}

}  // namespace wmens::oracle
