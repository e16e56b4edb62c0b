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

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wmens/errors.hpp"
#include "wmens/io.hpp"
#include "wmens/keys.hpp"
#include "wmens/reweight.hpp"
#include "wmens/scheme.hpp"

namespace wmens {

inline const std::vector<double>& default_fpr_grid() {
  static const std::vector<double> grid{1e-3, 1e-4, 1e-5};
  return grid;
}

/// Whether `token` is green under `key`, using the same green sets the
/// generator biases toward.
inline bool green_flag(const SchemeConfig& cfg, const LayerKey& key, Token token, std::size_t vocab) {
  if (token >= vocab) throw ConfigError("token outside the vocabulary");
  if (cfg.family == Family::kTournament) {
    return partition_bit(KeyStream(key, KeyDomain::kPartition), token);
  }
  return KeyedLayer::from_key(cfg, key, vocab).green(token);
}

/// Fraction of set flags.
inline double green_ratio(std::span<const std::uint8_t> flags) {
  if (flags.empty()) throw EmptyInputError("green ratio of an empty sequence");
  std::size_t count = 0;
  for (std::uint8_t f : flags) count += f != 0;
  return static_cast<double>(count) / static_cast<double>(flags.size());
}

inline double green_ratio(const std::vector<bool>& flags) {
  std::vector<std::uint8_t> bytes(flags.begin(), flags.end());
  return green_ratio(bytes);
}

/// (G - gamma) T / sqrt(T gamma (1 - gamma)).
inline double z_single(double green, std::size_t length, double gamma) {
  if (length == 0) throw EmptyInputError("z-score of an empty sequence");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError("gamma must lie in (0, 1)");
  const auto t = static_cast<double>(length);
  return (green - gamma) * t / std::sqrt(t * gamma * (1.0 - gamma));
}

/// (sum_i G_i - gamma n) T / sqrt(n T gamma (1 - gamma)).
inline double z_multi(std::span<const double> green, std::size_t length, double gamma) {
  if (green.empty()) throw EmptyInputError("z-score needs at least one layer");
  if (length == 0) throw EmptyInputError("z-score of an empty sequence");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError("gamma must lie in (0, 1)");
  const auto n = static_cast<double>(green.size());
  const auto t = static_cast<double>(length);
  double sum = 0.0;
  for (double g : green) sum += g;
  return (sum - gamma * n) * t / std::sqrt(n * t * gamma * (1.0 - gamma));
}

/// log10 of the upper normal tail 1 - Phi(z). Switches to the asymptotic
/// Mills-ratio series above z = 30, where the tail leaves double range
/// near z = 38.
inline double log10_p_value(double z) {
  if (z <= 30.0) return std::log10(0.5 * std::erfc(z / std::numbers::sqrt2));
  const double inv = 1.0 / (z * z);
  // 1 - 1/z^2 + 3/z^4 - 15/z^6 + ... ; terms shrink until well past z = 30.
  double term = 1.0;
  double series = 1.0;
  for (int k = 1; k <= 8; ++k) {
    term *= -static_cast<double>(2 * k - 1) * inv;
    series += term;
  }
  const double ln_tail = -0.5 * z * z - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) +
                         std::log(series);
  return ln_tail / std::numbers::ln10;
}

/// One-sided p-value 1 - Phi(z). Clamped to the smallest positive double once
/// the tail underflows; use log10_p_value for ranking extreme evidence.
inline double p_value(double z) {
  const double p = 0.5 * std::erfc(z / std::numbers::sqrt2);
  return std::max(p, std::numeric_limits<double>::denorm_min());
}

/// T x n matrix of green indicators: entry (j, i) is token j under layer i.
class GreenFlagMatrix {
 public:
  GreenFlagMatrix(std::size_t length, std::size_t layers)
      : length_(length), layers_(layers), flags_(length * layers, 0) {}

  std::size_t length() const noexcept { return length_; }
  std::size_t layers() const noexcept { return layers_; }
  bool at(std::size_t position, std::size_t layer) const {
    return flags_.at(position * layers_ + layer) != 0;
  }
  void set(std::size_t position, std::size_t layer, bool green) {
    flags_.at(position * layers_ + layer) = green ? 1 : 0;
  }

  // G_i for every layer.
  std::vector<double> layer_ratios() const {
    if (length_ == 0) throw EmptyInputError("green ratio of an empty sequence");
    std::vector<double> ratios(layers_, 0.0);
    std::vector<std::size_t> counts(layers_, 0);
    for (std::size_t j = 0; j < length_; ++j) {
      for (std::size_t i = 0; i < layers_; ++i) counts[i] += flags_[j * layers_ + i];
    }
    for (std::size_t i = 0; i < layers_; ++i) {
      ratios[i] = static_cast<double>(counts[i]) / static_cast<double>(length_);
    }
    return ratios;
  }

  friend bool operator==(const GreenFlagMatrix&, const GreenFlagMatrix&) = default;

 private:
  std::size_t length_;
  std::size_t layers_;
  std::vector<std::uint8_t> flags_;
};

struct DetectionReport {
  std::size_t length = 0;
  std::size_t layers = 0;
  double gamma = 0.5;
  std::vector<double> per_layer_green_ratio;
  double z_multi = 0.0;
  double p_value = 1.0;
  double log10_p_value = 0.0;
  std::vector<std::pair<double, bool>> verdicts;  // (FPR threshold, detected)

  // Detected at the coarsest (largest) threshold.
  bool detected() const {
    bool any = false;
    double coarsest = -1.0;
    for (const auto& [tau, hit] : verdicts) {
      if (tau > coarsest) {
        coarsest = tau;
        any = hit;
      }
    }
    return any;
  }
};

/// Recomputes every layer key from the observed token contexts and collects
/// the green indicators.
inline GreenFlagMatrix green_flags(std::span<const Token> tokens, const MasterSecret& master,
                                   const SchemeConfig& cfg, std::size_t vocab) {
  cfg.validate_for_vocab(vocab);
  const auto n = static_cast<std::size_t>(cfg.n_layers);
  GreenFlagMatrix flags(tokens.size(), n);
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (tokens[j] >= vocab) {
      throw ConfigError("token " + std::to_string(tokens[j]) + " at position " + std::to_string(j) +
                        " is outside the vocabulary of size " + std::to_string(vocab));
    }
    const std::vector<Token> window = context_window(tokens.first(j), cfg.context_width);
    const std::uint64_t digest = context_digest(window);
    for (std::size_t i = 0; i < n; ++i) {
      const LayerKey key = derive_layer_key(master, static_cast<int>(i), digest, j);
      flags.set(j, i, green_flag(cfg, key, tokens[j], vocab));
    }
  }
  return flags;
}

inline DetectionReport report_from_flags(const GreenFlagMatrix& flags, double gamma,
                                         std::span<const double> thresholds) {
  DetectionReport r;
  r.length = flags.length();
  r.layers = flags.layers();
  r.gamma = gamma;
  r.per_layer_green_ratio = flags.layer_ratios();
  r.z_multi = z_multi(r.per_layer_green_ratio, r.length, gamma);
  r.p_value = p_value(r.z_multi);
  r.log10_p_value = log10_p_value(r.z_multi);
  for (double tau : thresholds) r.verdicts.emplace_back(tau, r.p_value <= tau);
  return r;
}

/// Multi-layer red/green detection of `tokens`.
inline DetectionReport detect(std::span<const Token> tokens, const MasterSecret& master,
                              const SchemeConfig& cfg, std::size_t vocab,
                              std::span<const double> thresholds = default_fpr_grid()) {
  if (tokens.empty()) throw EmptyInputError("cannot detect on an empty token sequence");
  return report_from_flags(green_flags(tokens, master, cfg, vocab), cfg.gamma(), thresholds);
}

inline nlohmann::json to_json(const DetectionReport& r) {
  nlohmann::json verdicts = nlohmann::json::object();
  for (const auto& [tau, hit] : r.verdicts) verdicts[format_double(tau)] = hit;
  return nlohmann::json{{"T", r.length},
                        {"n", r.layers},
                        {"gamma", r.gamma},
                        {"per_layer_green_ratio", r.per_layer_green_ratio},
                        {"z_multi", r.z_multi},
                        {"p_value", r.p_value},
                        {"log10_p_value", r.log10_p_value},
                        {"verdicts", verdicts}};
}

// CSV dump with columns position,layer,flag.
inline void write_flag_csv(std::ostream& out, const GreenFlagMatrix& flags) {
  out << "position,layer,flag\n";
  for (std::size_t j = 0; j < flags.length(); ++j) {
    for (std::size_t i = 0; i < flags.layers(); ++i) {
      out << j << ',' << i << ',' << (flags.at(j, i) ? 1 : 0) << '\n';
    }
  }
}

}  // namespace wmens
