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
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "wmens/errors.hpp"
#include "wmens/keys.hpp"
#include "wmens/prob.hpp"
#include "wmens/scheme.hpp"

namespace wmens {

// Post-reweight entries below this are treated as rounding dust.
inline constexpr double kProbabilityFloor = 1e-15;

namespace detail {

inline void apply_floor(std::span<double> probs) {
  bool clamped = false;
  double total = 0.0;
  for (double& p : probs) {
    if (p < kProbabilityFloor) {
      clamped = clamped || p != 0.0;
      p = 0.0;
    }
    total += p;
  }
  if (clamped && total > 0.0) {
    for (double& p : probs) p /= total;
  }
}

// Reweighted CDF of the dipmark rule.
inline double shifted_cdf(double f, double alpha) {
  return std::max(f - alpha, 0.0) + std::max(f - (1.0 - alpha), 0.0);
}

}  // namespace detail

/// The key-dependent objects of one watermark layer, materialized for a
/// vocabulary of size `vocab`: a green partition (tournament) or a keyed
/// permutation with the dipmark shift or the selected channel.
///
/// Reweights act on a distribution restricted to an ascending `support` list;
/// tokens outside the support have probability zero and keep it.
class KeyedLayer {
 public:
  static KeyedLayer tournament(GreenPartition partition) {
    KeyedLayer k(Family::kTournament, partition.size());
    k.partition_.emplace(std::move(partition));
    return k;
  }

  // Tournament layer whose flags are read from the key stream; the words
  // covering the vocabulary are cached, one per 64 tokens.
  static KeyedLayer tournament(const LayerKey& key, std::size_t vocab) {
    KeyedLayer k(Family::kTournament, vocab);
    const KeyStream stream(key, KeyDomain::kPartition);
    k.words_.resize((vocab + 63) / 64);
    for (std::size_t w = 0; w < k.words_.size(); ++w) k.words_[w] = stream.word(w);
    return k;
  }

  static KeyedLayer dipmark(KeyedPermutation perm, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 0.5)) throw ParameterError("alpha must lie in [0, 0.5]");
    KeyedLayer k(Family::kDipmark, perm.size());
    k.perm_.emplace(std::move(perm));
    k.alpha_ = alpha;
    return k;
  }

  static KeyedLayer channel(KeyedPermutation perm, int channels, int selected) {
    check_channel_count(channels, perm.size());
    if (selected < 0 || selected >= channels) throw ParameterError("selected channel out of range");
    KeyedLayer k(Family::kChannel, perm.size());
    k.perm_.emplace(std::move(perm));
    k.channels_ = channels;
    k.selected_ = selected;
    return k;
  }

  static KeyedLayer from_key(const SchemeConfig& cfg, const LayerKey& key, std::size_t vocab) {
    switch (cfg.family) {
      case Family::kTournament: return tournament(key, vocab);
      case Family::kDipmark: return dipmark(KeyedPermutation::from_key(key, vocab), cfg.alpha);
      case Family::kChannel:
        return channel(KeyedPermutation::from_key(key, vocab), cfg.channels,
                       channel_select(key, cfg.channels));
    }
    throw ConfigError("unknown family");
  }

  Family family() const noexcept { return family_; }
  std::size_t vocab() const noexcept { return vocab_; }
  int selected_channel() const noexcept { return selected_; }

  // Tournament: partition bit. Dipmark: upper half of the permuted order.
  // Channel: member of the selected block of N / l consecutive ranks.
  bool green(Token t) const {
    switch (family_) {
      case Family::kTournament:
        if (partition_) return partition_->green(t);
        if (t >= vocab_) throw DimensionError("token outside the vocabulary");
        return (words_[t >> 6] >> (t & 63u)) & 1u;
      case Family::kDipmark: return 2 * perm_->rank(t) >= vocab_;
      case Family::kChannel:
        return perm_->rank(t) / (vocab_ / static_cast<std::size_t>(channels_)) ==
               static_cast<std::size_t>(selected_);
    }
    return false;
  }

  // flags[i] = green(support[i]).
  void green_flags(std::span<const Token> support, std::span<std::uint8_t> flags) const {
    if (flags.size() != support.size()) throw DimensionError("flag buffer does not match support");
    for (Token t : support) {
      if (t >= vocab_) throw DimensionError("token outside the vocabulary");
    }
    switch (family_) {
      case Family::kTournament:
        if (partition_) {
          for (std::size_t i = 0; i < support.size(); ++i) flags[i] = partition_->green(support[i]);
        } else {
          for (std::size_t i = 0; i < support.size(); ++i) {
            flags[i] = (words_[support[i] >> 6] >> (support[i] & 63u)) & 1u;
          }
        }
        return;
      case Family::kDipmark:
      case Family::kChannel:
        for (std::size_t i = 0; i < support.size(); ++i) flags[i] = green(support[i]);
        return;
    }
  }

  double green_mass(std::span<const Token> support, std::span<const double> probs) const {
    std::vector<std::uint8_t> flags(support.size());
    green_flags(support, flags);
    return masked_mass(flags, probs);
  }

  // Total of probs[i] over entries with flags[i] set.
  static double masked_mass(std::span<const std::uint8_t> flags, std::span<const double> probs) {
    double mass = 0.0;
    for (std::size_t i = 0; i < flags.size(); ++i) {
      if (flags[i] != 0) mass += probs[i];
    }
    return mass;
  }

  // out = F(in). `order` is scratch space for the dipmark sort.
  void reweight(std::span<const Token> support, std::span<const double> in, std::span<double> out,
                std::vector<std::size_t>& order) const {
    std::vector<std::uint8_t> flags(support.size());
    green_flags(support, flags);
    reweight(support, in, flags, out, order);
  }

  // As above with the green flags of `support` already computed.
  void reweight(std::span<const Token> support, std::span<const double> in,
                std::span<const std::uint8_t> flags, std::span<double> out,
                std::vector<std::size_t>& order) const {
    switch (family_) {
      case Family::kTournament: reweight_tournament(in, flags, out); break;
      case Family::kDipmark: reweight_dipmark(support, in, out, order); break;
      case Family::kChannel: reweight_channel(in, flags, out); break;
    }
    detail::apply_floor(out);
  }

 private:
  KeyedLayer(Family family, std::size_t vocab) : family_(family), vocab_(vocab) {}

  // Exact two-candidate tournament: with red mass R, green p -> p (1 + R),
  // red p -> p R.
  static void reweight_tournament(std::span<const double> in, std::span<const std::uint8_t> flags,
                                  std::span<double> out) {
    double red = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (flags[i] == 0) red += in[i];
    }
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * (flags[i] != 0 ? 1.0 + red : red);
  }

  void reweight_dipmark(std::span<const Token> support, std::span<const double> in,
                        std::span<double> out, std::vector<std::size_t>& order) const {
    order.resize(support.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return perm_->rank(support[a]) < perm_->rank(support[b]);
    });
    double cdf = 0.0;
    double previous = 0.0;
    for (std::size_t idx : order) {
      cdf += in[idx];
      const double shifted = detail::shifted_cdf(cdf, alpha_);
      out[idx] = std::max(shifted - previous, 0.0);
      previous = shifted;
    }
  }

  void reweight_channel(std::span<const double> in, std::span<const std::uint8_t> flags,
                        std::span<double> out) const {
    const double selected_mass = masked_mass(flags, in);
    const double target = std::min(1.0, static_cast<double>(channels_) * selected_mass);
    const double inside = selected_mass > 0.0 ? target / selected_mass : 0.0;
    const double rest = 1.0 - selected_mass;
    const double outside = rest > 0.0 ? std::max(1.0 - target, 0.0) / rest : 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * (flags[i] != 0 ? inside : outside);
  }

  Family family_;
  std::size_t vocab_;
  std::optional<GreenPartition> partition_;
  std::vector<std::uint64_t> words_;
  std::optional<KeyedPermutation> perm_;
  double alpha_ = 0.0;
  int channels_ = 2;
  int selected_ = 0;
};

namespace detail {

inline std::vector<Token> full_support(std::size_t n) {
  std::vector<Token> s(n);
  std::iota(s.begin(), s.end(), Token{0});
  return s;
}

inline TokenDist reweight_dense(const KeyedLayer& layer, const TokenDist& p) {
  if (layer.vocab() != p.size()) throw DimensionError("key vocabulary does not match distribution");
  const std::vector<Token> support = full_support(p.size());
  std::vector<double> out(p.size());
  std::vector<std::size_t> order;
  layer.reweight(support, p.probs(), out, order);
  return TokenDist::adopt(std::move(out));
}

}  // namespace detail

/// Two-candidate tournament reweight under `part`.
inline TokenDist tournament_reweight(const TokenDist& p, const GreenPartition& part) {
  return detail::reweight_dense(KeyedLayer::tournament(part), p);
}

/// Dipmark reweight: in permuted order, CDF F becomes
/// max(F - alpha, 0) + max(F - (1 - alpha), 0).
inline TokenDist dipmark_reweight(const TokenDist& p, const KeyedPermutation& perm, double alpha) {
  return detail::reweight_dense(KeyedLayer::dipmark(perm, alpha), p);
}

/// Channel reweight: the selected block of the permuted vocabulary is scaled
/// to mass min(1, l S); the remainder is spread over the other tokens in
/// proportion to P.
inline TokenDist channel_reweight(const TokenDist& p, const KeyedPermutation& perm, int channels,
                                  int selected) {
  return detail::reweight_dense(KeyedLayer::channel(perm, channels, selected), p);
}

/// F(P, key) for the configured family.
inline TokenDist watermark(const SchemeConfig& cfg, const TokenDist& p, const LayerKey& key) {
  return detail::reweight_dense(KeyedLayer::from_key(cfg, key, p.size()), p);
}

/// F_lambda(P, key) = lambda F(P, key) + (1 - lambda) P.
inline TokenDist apply_weakened(const SchemeConfig& cfg, const TokenDist& p, const LayerKey& key) {
  check_lambda(cfg.lambda);
  if (cfg.lambda == 0.0) return p;
  return mix(p, watermark(cfg, p, key), cfg.lambda);
}

struct LayerOutcome {
  TokenDist dist_after;
  double entropy_after = 0.0;
  double green_mass = 0.0;
};

struct EnsembleResult {
  TokenDist dist;
  std::vector<LayerOutcome> layers;
};

/// Per-layer summary recorded by the in-place ensemble.
struct LayerStats {
  double entropy_after = 0.0;
  double green_mass = 0.0;
};

/// Reusable buffers for ensemble_in_place.
struct EnsembleWorkspace {
  std::vector<double> reweighted;
  std::vector<std::uint8_t> flags;
  std::vector<std::size_t> order;
};

/// Applies F_lambda layer by layer to `probs` (the masses of `support`), in
/// place. When `stats` is non-empty it receives one entry per layer; entropy
/// is only evaluated if `with_entropy` is set.
inline void ensemble_in_place(double lambda, std::span<const KeyedLayer> layers,
                              std::span<const Token> support, std::span<double> probs,
                              EnsembleWorkspace& ws, std::span<LayerStats> stats = {},
                              bool with_entropy = true) {
  ws.reweighted.resize(support.size());
  ws.flags.resize(support.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const KeyedLayer& layer = layers[i];
    layer.green_flags(support, ws.flags);
    if (lambda > 0.0) {
      layer.reweight(support, probs, ws.flags, ws.reweighted, ws.order);
      if (lambda == 1.0) {
        std::copy(ws.reweighted.begin(), ws.reweighted.end(), probs.begin());
      } else {
        for (std::size_t j = 0; j < probs.size(); ++j) {
          probs[j] = mix_entry(probs[j], ws.reweighted[j], lambda);
        }
      }
    }
    if (!stats.empty()) {
      stats[i].green_mass = KeyedLayer::masked_mass(ws.flags, probs);
      stats[i].entropy_after = with_entropy ? entropy(probs) : 0.0;
    }
  }
}

/// n-fold ensemble over explicit layers, layer 0 first.
inline EnsembleResult ensemble_apply(double lambda, std::span<const KeyedLayer> layers,
                                     const TokenDist& p) {
  check_lambda(lambda);
  const std::vector<Token> support = detail::full_support(p.size());
  std::vector<double> probs = p.vector();
  EnsembleWorkspace ws;
  EnsembleResult result{p, {}};
  result.layers.reserve(layers.size());
  for (const KeyedLayer& layer : layers) {
    if (layer.vocab() != p.size()) throw DimensionError("key vocabulary does not match distribution");
    LayerStats stats;
    ensemble_in_place(lambda, std::span(&layer, 1), support, probs, ws, std::span(&stats, 1));
    result.layers.push_back(LayerOutcome{TokenDist::adopt(probs), stats.entropy_after, stats.green_mass});
  }
  if (!result.layers.empty()) result.dist = result.layers.back().dist_after;
  return result;
}

/// n-fold ensemble: applies F_lambda with keys[0], then keys[1], ...
inline EnsembleResult ensemble_apply(const SchemeConfig& cfg, std::span<const LayerKey> keys,
                                     const TokenDist& p) {
  cfg.validate();
  if (keys.size() != static_cast<std::size_t>(cfg.n_layers)) {
    throw ConfigError("ensemble needs exactly n_layers keys");
  }
  if (cfg.family == Family::kChannel) check_channel_count(cfg.channels, p.size());
  std::vector<KeyedLayer> layers;
  layers.reserve(keys.size());
  for (const LayerKey& k : keys) layers.push_back(KeyedLayer::from_key(cfg, k, p.size()));
  return ensemble_apply(cfg.lambda, layers, p);
}

}  // namespace wmens
