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
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "wmens/detection.hpp"
#include "wmens/errors.hpp"
#include "wmens/io.hpp"
#include "wmens/keys.hpp"
#include "wmens/oracle.hpp"
#include "wmens/prob.hpp"
#include "wmens/reweight.hpp"
#include "wmens/rng.hpp"
#include "wmens/scheme.hpp"

namespace wmens {

enum class ThresholdMode { kAnalytic, kEmpirical };

inline std::string_view to_string(ThresholdMode m) {
  return m == ThresholdMode::kAnalytic ? "analytic" : "empirical";
}

inline ThresholdMode threshold_mode_from_string(std::string_view s) {
  if (s == "analytic") return ThresholdMode::kAnalytic;
  if (s == "empirical") return ThresholdMode::kEmpirical;
  throw ConfigError("threshold mode must be 'analytic' or 'empirical'");
}

/// Random token replacement: each position independently replaced by a
/// uniform vocabulary token with probability epsilon.
struct RandomReplaceAttack {
  double epsilon = 0.0;
};

struct TrialConfig {
  SchemeConfig scheme;
  MarkovSourceParams source;
  std::size_t length = 250;
  std::size_t trials = 500;
  std::uint64_t seed = 42;
  std::vector<double> fpr_grid = default_fpr_grid();
  std::optional<RandomReplaceAttack> attack;
  ThresholdMode threshold_mode = ThresholdMode::kAnalytic;
  // Channel counts above two only run after passing the exactness gate.
  bool experimental_channels = false;
  unsigned threads = 1;

  double epsilon() const { return attack ? attack->epsilon : 0.0; }

  void validate() const {
    scheme.validate_for_vocab(source.vocab);
    if (trials < 1) throw ConfigError("trials must be at least 1");
    if (length < 1) throw ConfigError("sequence length must be at least 1");
    if (attack && !(attack->epsilon >= 0.0 && attack->epsilon <= 1.0)) {
      throw ConfigError("attack epsilon must lie in [0, 1]");
    }
    for (double f : fpr_grid) {
      if (!(f > 0.0 && f < 1.0)) throw ConfigError("FPR thresholds must lie in (0, 1)");
    }
    if (threads < 1) throw ConfigError("threads must be at least 1");
  }
};

// Independent random streams of one trial.
enum class StreamRole : std::uint64_t { kWatermarkSample = 1, kNullSample = 2, kAttack = 3 };

inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial, StreamRole role) {
  return derive_seed(seed, trial, static_cast<std::uint64_t>(role));
}

/// Per-token, per-layer record of one watermarked generation.
struct GenerationTrace {
  std::vector<Token> tokens;
  std::size_t layers = 0;
  std::vector<LayerStats> stats;  // row-major T x n
  GreenFlagMatrix flags{0, 0};

  const LayerStats& at(std::size_t position, std::size_t layer) const {
    return stats.at(position * layers + layer);
  }
};

inline std::vector<Token> attack_random_replace(std::span<const Token> tokens, double epsilon,
                                                std::size_t vocab, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ParameterError("epsilon must lie in [0, 1]");
  std::vector<Token> out(tokens.begin(), tokens.end());
  for (Token& t : out) {
    if (rng.uniform() < epsilon) t = static_cast<Token>(rng.below(vocab));
  }
  return out;
}

struct TrialOutcome {
  double z = 0.0;
  double p_value = 1.0;
  double log10_p = 0.0;
};

struct MetricsRow {
  std::string scheme;
  Family family = Family::kTournament;
  double lambda = 1.0;
  double alpha = 0.5;
  int channels = 2;
  int n_layers = 1;
  std::size_t length = 0;
  double epsilon = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
  double tpr_se = 0.0;
  double median_log10_p = 0.0;
  std::size_t trials = 0;
  // Not part of the CSV contract.
  double mean_z = 0.0;
  double mean_z_se = 0.0;
  double null_rejection_rate = 0.0;
  ThresholdMode mode = ThresholdMode::kAnalytic;
};

inline constexpr std::string_view kMetricsHeader =
    "scheme,family,lambda,alpha,l,n_layers,T,epsilon,fpr,tpr,tpr_se,median_log10_p,trials";

struct MetricsTable {
  std::vector<MetricsRow> rows;

  void write_csv(std::ostream& out) const {
    out << kMetricsHeader << '\n';
    for (const MetricsRow& r : rows) {
      out << r.scheme << ',' << to_string(r.family) << ',' << format_double(r.lambda) << ','
          << format_double(r.alpha) << ',' << r.channels << ',' << r.n_layers << ',' << r.length
          << ',' << format_double(r.epsilon) << ',' << format_double(r.fpr) << ','
          << format_double(r.tpr) << ',' << format_double(r.tpr_se) << ','
          << format_double(r.median_log10_p) << ',' << r.trials << '\n';
    }
  }
};

inline double median(std::vector<double> values) {
  if (values.empty()) throw EmptyInputError("median of an empty sample");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

struct BatteryResult {
  TrialConfig config;
  std::vector<TrialOutcome> watermarked;
  std::vector<TrialOutcome> null;
  MetricsTable table;
};

namespace detail {

// Runs body(i) for i in [0, count) on `threads` workers. Each index writes its
// own slot, so results do not depend on scheduling.
template <typename Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < count; i = next++) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Watermarked and unwatermarked generation from a fixed synthetic source.
class Simulator {
 public:
  Simulator(TrialConfig cfg, MasterSecret secret)
      : cfg_(std::move(cfg)), secret_(secret), source_((cfg_.validate(), cfg_.source)) {
    if (cfg_.scheme.family == Family::kChannel && cfg_.scheme.channels > 2) {
      if (!cfg_.experimental_channels) {
        throw ConfigError("channel count l > 2 is not verified unbiased; enable experimental "
                          "channels to run the exactness gate");
      }
      const oracle::EnumerationReport gate = oracle::channel_gate(cfg_.scheme.channels, cfg_.seed);
      if (!gate.passed) {
        throw ConfigError("channel exactness gate failed for l=" + std::to_string(cfg_.scheme.channels) +
                          ": max bias " + format_double(gate.max_abs_bias));
      }
    }
  }

  const TrialConfig& config() const noexcept { return cfg_; }
  const MarkovSource& source() const noexcept { return source_; }

  /// Generates one watermarked sequence. Entropy is evaluated per layer only
  /// when `with_entropy` is set.
  GenerationTrace generate_watermarked(std::size_t trial, bool with_entropy = true) const {
    const SchemeConfig& scheme = cfg_.scheme;
    const std::size_t vocab = source_.vocab();
    const auto n = static_cast<std::size_t>(scheme.n_layers);
    Rng rng(trial_seed(cfg_.seed, trial, StreamRole::kWatermarkSample));

    GenerationTrace trace;
    trace.layers = n;
    trace.tokens.reserve(cfg_.length);
    trace.stats.resize(cfg_.length * n);
    trace.flags = GreenFlagMatrix(cfg_.length, n);

    const std::vector<Token> full = detail::full_support(vocab);
    std::vector<double> probs;
    std::vector<KeyedLayer> layers;
    layers.reserve(n);
    EnsembleWorkspace ws;
    for (std::size_t t = 0; t < cfg_.length; ++t) {
      std::span<const Token> support = full;
      const TokenDist* base = &source_.initial();
      if (t > 0) {
        support = source_.support(trace.tokens.back());
        base = &source_.row(trace.tokens.back());
      }
      probs.resize(support.size());
      for (std::size_t i = 0; i < support.size(); ++i) probs[i] = (*base)[support[i]];

      const std::uint64_t digest = context_digest(context_window(trace.tokens, scheme.context_width));
      layers.clear();
      for (std::size_t i = 0; i < n; ++i) {
        const LayerKey key = derive_layer_key(secret_, static_cast<int>(i), digest, t);
        layers.push_back(KeyedLayer::from_key(scheme, key, vocab));
      }
      ensemble_in_place(scheme.lambda, layers, support, probs, ws,
                        std::span(trace.stats).subspan(t * n, n), with_entropy);
      const Token token = support[inverse_cdf(probs, rng.uniform())];
      trace.tokens.push_back(token);
      for (std::size_t i = 0; i < n; ++i) trace.flags.set(t, i, layers[i].green(token));
    }
    return trace;
  }

  /// Samples a sequence from the raw source (no watermark).
  std::vector<Token> generate_null(std::size_t trial) const {
    Rng rng(trial_seed(cfg_.seed, trial, StreamRole::kNullSample));
    std::vector<Token> tokens;
    tokens.reserve(cfg_.length);
    for (std::size_t t = 0; t < cfg_.length; ++t) {
      const TokenDist& p = t == 0 ? source_.initial() : source_.row(tokens.back());
      tokens.push_back(sample_token(p, rng));
    }
    return tokens;
  }

  TrialOutcome score(const GreenFlagMatrix& flags) const {
    const DetectionReport r = report_from_flags(flags, cfg_.scheme.gamma(), {});
    return {r.z_multi, r.p_value, r.log10_p_value};
  }

  // Watermarked trial, attacked when configured, scored by the detector.
  TrialOutcome watermarked_trial(std::size_t trial) const {
    const GenerationTrace trace = generate_watermarked(trial, false);
    if (!cfg_.attack) return score(trace.flags);
    Rng attack_rng(trial_seed(cfg_.seed, trial, StreamRole::kAttack));
    const std::vector<Token> attacked =
        attack_random_replace(trace.tokens, cfg_.attack->epsilon, source_.vocab(), attack_rng);
    return score(green_flags(attacked, secret_, cfg_.scheme, source_.vocab()));
  }

  TrialOutcome null_trial(std::size_t trial) const {
    return score(green_flags(generate_null(trial), secret_, cfg_.scheme, source_.vocab()));
  }

  std::vector<TrialOutcome> watermarked_outcomes() const {
    std::vector<TrialOutcome> out(cfg_.trials);
    detail::parallel_for(cfg_.trials, cfg_.threads, [&](std::size_t i) { out[i] = watermarked_trial(i); });
    return out;
  }

  std::vector<TrialOutcome> null_outcomes(std::size_t trials) const {
    std::vector<TrialOutcome> out(trials);
    detail::parallel_for(trials, cfg_.threads, [&](std::size_t i) { out[i] = null_trial(i); });
    return out;
  }

  /// `trials` watermarked and `trials` null sequences, reduced to one metrics
  /// row per FPR threshold.
  BatteryResult run_battery() const {
    BatteryResult result;
    result.config = cfg_;
    result.watermarked = watermarked_outcomes();
    result.null = null_outcomes(cfg_.trials);
    result.table = summarize(result.watermarked, result.null);
    return result;
  }

  MetricsTable summarize(const std::vector<TrialOutcome>& marked,
                         const std::vector<TrialOutcome>& null) const {
    std::vector<double> marked_log(marked.size()), null_log(null.size());
    double z_sum = 0.0, z_sq = 0.0;
    for (std::size_t i = 0; i < marked.size(); ++i) {
      marked_log[i] = marked[i].log10_p;
      z_sum += marked[i].z;
      z_sq += marked[i].z * marked[i].z;
    }
    for (std::size_t i = 0; i < null.size(); ++i) null_log[i] = null[i].log10_p;
    std::vector<double> null_sorted = null_log;
    std::sort(null_sorted.begin(), null_sorted.end());

    const auto m = static_cast<double>(marked.size());
    const double mean_z = z_sum / m;
    const double var_z = marked.size() > 1 ? std::max(z_sq / m - mean_z * mean_z, 0.0) * m / (m - 1.0) : 0.0;
    const double median_log = median(marked_log);

    MetricsTable table;
    for (double fpr : cfg_.fpr_grid) {
      MetricsRow row;
      row.scheme = cfg_.scheme.label();
      row.family = cfg_.scheme.family;
      row.lambda = cfg_.scheme.lambda;
      row.alpha = cfg_.scheme.alpha;
      row.channels = cfg_.scheme.channels;
      row.n_layers = cfg_.scheme.n_layers;
      row.length = cfg_.length;
      row.epsilon = cfg_.epsilon();
      row.fpr = fpr;
      row.trials = marked.size();
      row.mode = cfg_.threshold_mode;
      row.median_log10_p = median_log;
      row.mean_z = mean_z;
      row.mean_z_se = std::sqrt(var_z / m);

      std::size_t hits = 0, null_hits = 0;
      if (cfg_.threshold_mode == ThresholdMode::kAnalytic) {
        for (const TrialOutcome& o : marked) hits += o.p_value <= fpr;
        for (const TrialOutcome& o : null) null_hits += o.p_value <= fpr;
      } else {
        // Reject below the (k+1)-th smallest null log p, k = floor(fpr * M):
        // at most k null trials fall strictly below it.
        const auto k = static_cast<std::size_t>(std::floor(fpr * static_cast<double>(null_sorted.size())));
        const double cut = null_sorted[std::min(k, null_sorted.size() - 1)];
        for (double v : marked_log) hits += v < cut;
        for (double v : null_log) null_hits += v < cut;
      }
      row.tpr = static_cast<double>(hits) / m;
      row.tpr_se = std::sqrt(row.tpr * (1.0 - row.tpr) / m);
      row.null_rejection_rate = null.empty() ? 0.0 : static_cast<double>(null_hits) / static_cast<double>(null.size());
      table.rows.push_back(row);
    }
    return table;
  }

 private:
  TrialConfig cfg_;
  MasterSecret secret_;
  MarkovSource source_;
};

inline BatteryResult run_battery(const TrialConfig& cfg, const MasterSecret& secret) {
  return Simulator(cfg, secret).run_battery();
}

enum class SweepAxis { kLambda, kAlpha, kLength, kEpsilon };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kLambda: return "lambda";
    case SweepAxis::kAlpha: return "alpha";
    case SweepAxis::kLength: return "length";
    case SweepAxis::kEpsilon: return "epsilon";
  }
  return "unknown";
}

inline SweepAxis sweep_axis_from_string(std::string_view s) {
  if (s == "lambda") return SweepAxis::kLambda;
  if (s == "alpha") return SweepAxis::kAlpha;
  if (s == "length") return SweepAxis::kLength;
  if (s == "epsilon") return SweepAxis::kEpsilon;
  throw ConfigError("sweep axis must be one of lambda, alpha, length, epsilon");
}

inline TrialConfig with_axis_value(TrialConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kLambda: cfg.scheme.lambda = value; break;
    case SweepAxis::kAlpha:
      if (cfg.scheme.family != Family::kDipmark) throw ConfigError("the alpha axis needs the dipmark family");
      cfg.scheme.alpha = value;
      break;
    case SweepAxis::kLength:
      if (!(value >= 1.0) || value != std::floor(value)) throw ConfigError("length grid values must be positive integers");
      cfg.length = static_cast<std::size_t>(value);
      break;
    case SweepAxis::kEpsilon: cfg.attack = RandomReplaceAttack{value}; break;
  }
  return cfg;
}

struct SweepResult {
  MetricsTable table;
  std::vector<BatteryResult> points;
};

/// One battery per grid value. Every point reuses the same seed, so trial i
/// draws the same random streams at every point.
inline SweepResult sweep(const TrialConfig& base, SweepAxis axis, std::span<const double> grid,
                         const MasterSecret& secret) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  SweepResult result;
  for (double value : grid) {
    result.points.push_back(run_battery(with_axis_value(base, axis, value), secret));
    const auto& rows = result.points.back().table.rows;
    result.table.rows.insert(result.table.rows.end(), rows.begin(), rows.end());
  }
  return result;
}

inline constexpr std::string_view kTraceHeader = "trial,position,layer,entropy_after,green_mass,flag";

inline void write_trace_csv_rows(std::ostream& out, std::size_t trial, const GenerationTrace& trace) {
  for (std::size_t j = 0; j < trace.tokens.size(); ++j) {
    for (std::size_t i = 0; i < trace.layers; ++i) {
      const LayerStats& s = trace.at(j, i);
      out << trial << ',' << j << ',' << i << ',' << format_double(s.entropy_after) << ','
          << format_double(s.green_mass) << ',' << (trace.flags.at(j, i) ? 1 : 0) << '\n';
    }
  }
}

}  // namespace wmens
