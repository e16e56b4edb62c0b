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

// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Experiments use the library's default source unless
// --support/--beta override it, and a master secret derived from seed 42.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include <CLI11.hpp>

#include "wmens/wmens.hpp"

namespace {

using namespace wmens;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) { return format_double(v); }

// One-sided exact sign test: P(W >= wins) for W ~ Binomial(wins + losses, 1/2).
double sign_test(std::size_t wins, std::size_t losses) {
  const auto n = static_cast<double>(wins + losses);
  double p = 0.0;
  for (std::size_t k = wins; k <= wins + losses; ++k) {
    const auto kd = static_cast<double>(k);
    p += std::exp(std::lgamma(n + 1) - std::lgamma(kd + 1) - std::lgamma(n - kd + 1) - n * std::log(2.0));
  }
  return std::min(p, 1.0);
}

struct Paired {
  std::size_t wins = 0;
  std::size_t losses = 0;
  double p = 1.0;
};

// Trial i of `a` against trial i of `b`; a win is a smaller log10 p-value.
Paired paired_sign_test(const std::vector<TrialOutcome>& a, const std::vector<TrialOutcome>& b) {
  Paired r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].log10_p < b[i].log10_p) ++r.wins;
    if (a[i].log10_p > b[i].log10_p) ++r.losses;
  }
  r.p = sign_test(r.wins, r.losses);
  return r;
}

double median_log10_p(const std::vector<TrialOutcome>& outcomes) {
  std::vector<double> v;
  v.reserve(outcomes.size());
  for (const TrialOutcome& o : outcomes) v.push_back(o.log10_p);
  return median(v);
}

Verdict from_check(const std::vector<CheckResult>& checks, const std::string& prefix, std::string& detail) {
  bool ok = true;
  for (const CheckResult& c : checks) {
    if (c.name.rfind(prefix, 0) != 0) continue;
    ok = ok && c.status == CheckStatus::kPass;
    detail += " " + c.name + "[" + std::string(to_string(c.status)) + " margin=" + fmt(c.margin) + "]";
  }
  return {ok, detail};
}

Verdict criterion_distortion_free(const std::vector<CheckResult>& checks, double verify_seconds) {
  std::string detail = "verify took " + fmt(std::round(verify_seconds * 10) / 10) + " s;";
  Verdict v = from_check(checks, "distortion_free.", detail);
  Verdict l2 = from_check(checks, "channel_unbiased.l2", v.detail);
  v.pass = v.pass && l2.pass && verify_seconds < 60.0;
  v.detail = l2.detail;
  return v;
}

Verdict criterion_green_ratio(const std::vector<CheckResult>& checks) {
  std::string detail;
  Verdict a = from_check(checks, "green_closed_form.", detail);
  Verdict b = from_check(checks, "entropy_bound.", a.detail);
  return {a.pass && b.pass, b.detail};
}

Verdict criterion_theorems(const std::vector<CheckResult>& checks) {
  std::string detail;
  return from_check(checks, "entropy_theorems.", detail);
}

MarkovSourceParams& source_params() {
  static MarkovSourceParams p;
  return p;
}

TrialConfig base_config() {
  TrialConfig cfg;
  cfg.source = source_params();
  cfg.scheme.family = Family::kTournament;
  cfg.scheme.n_layers = 30;
  cfg.scheme.lambda = 1.0;
  cfg.length = 250;
  cfg.trials = 500;
  cfg.seed = 42;
  return cfg;
}

const MasterSecret& secret() {
  static const MasterSecret s = MasterSecret::from_seed(42);
  return s;
}

Verdict criterion_null_calibration() {
  const std::size_t m = 10000;
  const Simulator sim(base_config(), secret());
  const std::vector<TrialOutcome> null = sim.null_outcomes(m);

  std::size_t rejected = 0;
  std::vector<double> z;
  z.reserve(m);
  for (const TrialOutcome& o : null) {
    z.push_back(o.z);
    if (o.p_value <= 1e-3) ++rejected;
  }
  std::sort(z.begin(), z.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double cdf = 0.5 * std::erfc(-z[i] / std::sqrt(2.0));
    ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / m), std::abs(static_cast<double>(i + 1) / m - cdf)});
  }
  const double fpr = static_cast<double>(rejected) / m;
  const double sigma = std::sqrt(1e-3 * (1 - 1e-3) / m);
  const bool fpr_ok = std::abs(fpr - 1e-3) <= 3 * sigma;
  return {fpr_ok && ks < 0.02, "FPR@1e-3=" + fmt(fpr) + " (3 sigma band " + fmt(1e-3 - 3 * sigma) + ".." +
                                   fmt(1e-3 + 3 * sigma) + "), KS=" + fmt(ks) + " (limit 0.02)"};
}

// Per-trial means over positions of one per-layer statistic.
struct LayerCurves {
  std::vector<std::vector<double>> entropy;  // [trial][layer]
  std::vector<std::vector<double>> green;
};

LayerCurves layer_curves(const TrialConfig& cfg) {
  const Simulator sim(cfg, secret());
  const auto n = static_cast<std::size_t>(cfg.scheme.n_layers);
  LayerCurves c;
  c.entropy.assign(cfg.trials, std::vector<double>(n, 0.0));
  c.green.assign(cfg.trials, std::vector<double>(n, 0.0));
  detail::parallel_for(cfg.trials, cfg.threads, [&](std::size_t t) {
    const GenerationTrace trace = sim.generate_watermarked(t);
    for (std::size_t j = 0; j < trace.tokens.size(); ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        c.entropy[t][i] += trace.at(j, i).entropy_after / static_cast<double>(cfg.length);
        c.green[t][i] += trace.at(j, i).green_mass / static_cast<double>(cfg.length);
      }
    }
  });
  return c;
}

// Mean and standard error of x[t] - y[t].
std::pair<double, double> paired_difference(const std::vector<double>& x, const std::vector<double>& y) {
  const auto m = static_cast<double>(x.size());
  double mean = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) mean += x[t] - y[t];
  mean /= m;
  double ss = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) ss += (x[t] - y[t] - mean) * (x[t] - y[t] - mean);
  return {mean, std::sqrt(ss / (m - 1) / m)};
}

std::vector<double> column(const std::vector<std::vector<double>>& rows, std::size_t i) {
  std::vector<double> c;
  c.reserve(rows.size());
  for (const auto& r : rows) c.push_back(r[i]);
  return c;
}

Verdict criterion_layer_shape() {
  const auto t0 = Clock::now();
  TrialConfig cfg = base_config();
  cfg.length = 150;
  cfg.scheme.lambda = 0.6;
  const LayerCurves weak = layer_curves(cfg);
  cfg.scheme.lambda = 1.0;
  const LayerCurves strong = layer_curves(cfg);
  const double elapsed = seconds_since(t0);
  const std::size_t n = static_cast<std::size_t>(cfg.scheme.n_layers);

  // Each comparison must clear two paired standard errors.
  std::size_t failures = 0;
  std::string first_failures;
  std::map<std::string, std::pair<int, int>> tally;  // group -> (failed, total)
  auto require = [&](bool ok, const std::string& group, const std::string& what) {
    ++tally[group].second;
    if (ok) return;
    ++tally[group].first;
    if (failures++ < 3) first_failures += " " + what;
  };
  double min_dominance_z = INFINITY;
  int significant_increases = 0;
  for (const auto& [name, weak_rows, strong_rows] :
       {std::tuple{"entropy", &weak.entropy, &strong.entropy}, std::tuple{"green", &weak.green, &strong.green}}) {
    for (const auto& [lambda, rows] : {std::pair{"0.6", weak_rows}, std::pair{"1.0", strong_rows}}) {
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto [d, se] = paired_difference(column(*rows, i + 1), column(*rows, i));
        if (d > 2 * se) ++significant_increases;
        require(d < -2 * se, std::string(name) + " decreasing lambda=" + lambda,
                std::string(name) + "[lambda=" + lambda + "] layer" + std::to_string(i + 2) +
                                 "-layer" + std::to_string(i + 1) + "=" + fmt(d) + " (2SE=" + fmt(2 * se) + ")");
      }
    }
    for (std::size_t i = 1; i < n; ++i) {
      const auto [d, se] = paired_difference(column(*weak_rows, i), column(*strong_rows, i));
      min_dominance_z = std::min(min_dominance_z, d / se);
      require(d > 2 * se, std::string(name) + " lambda0.6 above lambda1.0",
              std::string(name) + " layer" + std::to_string(i + 1) + " lambda0.6-lambda1.0=" + fmt(d) +
                              " (2SE=" + fmt(2 * se) + ")");
    }
  }
  auto mean_at = [](const std::vector<std::vector<double>>& rows, std::size_t i) {
    double s = 0.0;
    for (const auto& r : rows) s += r[i];
    return s / static_cast<double>(rows.size());
  };
  std::string groups;
  for (const auto& [group, counts] : tally) {
    groups += " " + group + ":" + std::to_string(counts.first) + "/" + std::to_string(counts.second);
  }
  std::string detail = std::to_string(failures) + " of " + std::to_string(6 * (n - 1)) +
                       " comparisons failed (failed/total by group:" + groups + "); layer steps rising by more than 2 SE: " +
                       std::to_string(significant_increases) + "; e.g." + first_failures + "; min dominance z=" + fmt(min_dominance_z) + "; entropy layer1/2/" +
                       std::to_string(n) + " lambda0.6=" + fmt(mean_at(weak.entropy, 0)) + "/" +
                       fmt(mean_at(weak.entropy, 1)) + "/" + fmt(mean_at(weak.entropy, n - 1)) +
                       " lambda1.0=" + fmt(mean_at(strong.entropy, 0)) + "/" + fmt(mean_at(strong.entropy, 1)) +
                       "/" + fmt(mean_at(strong.entropy, n - 1)) + "; green lambda0.6=" +
                       fmt(mean_at(weak.green, 0)) + "/" + fmt(mean_at(weak.green, 1)) + "/" +
                       fmt(mean_at(weak.green, n - 1)) + " lambda1.0=" + fmt(mean_at(strong.green, 0)) + "/" +
                       fmt(mean_at(strong.green, 1)) + "/" + fmt(mean_at(strong.green, n - 1)) + "; runtime " +
                       fmt(std::round(elapsed)) + " s";
  return {failures == 0 && elapsed < 300.0, detail};
}

Verdict criterion_lambda_sweep(SweepResult& lambda_sweep) {
  const std::vector<double> grid{0.2, 0.4, 0.6, 0.8, 1.0};
  lambda_sweep = sweep(base_config(), SweepAxis::kLambda, grid, secret());
  const auto& points = lambda_sweep.points;
  std::string detail = "median log10 p:";
  std::size_t best = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    detail += " lambda" + fmt(grid[i]) + "=" + fmt(median_log10_p(points[i].watermarked));
    if (i + 1 < grid.size() &&
        median_log10_p(points[i].watermarked) < median_log10_p(points[best].watermarked)) {
      best = i;
    }
  }
  const double best_median = median_log10_p(points[best].watermarked);
  const double full_median = median_log10_p(points.back().watermarked);
  const Paired test = paired_sign_test(points[best].watermarked, points.back().watermarked);
  detail += "; lambda*=" + fmt(grid[best]) + " vs 1.0: wins " + std::to_string(test.wins) + ", losses " +
            std::to_string(test.losses) + ", sign test p=" + fmt(test.p);
  return {best_median < full_median && test.p < 0.01, detail};
}

Verdict criterion_length(const BatteryResult& full_length) {
  const std::vector<double> grid{50, 100, 150, 200};
  const SweepResult shorter = sweep(base_config(), SweepAxis::kLength, grid, secret());
  std::vector<const BatteryResult*> points;
  for (const BatteryResult& b : shorter.points) points.push_back(&b);
  points.push_back(&full_length);

  auto tpr_at = [](const BatteryResult& b, double fpr) {
    for (const MetricsRow& r : b.table.rows) {
      if (r.fpr == fpr) return r.tpr;
    }
    throw ConfigError("FPR not in grid");
  };
  bool monotone = true;
  std::string detail = "TPR@1e-4:";
  double previous = -1.0;
  for (const BatteryResult* b : points) {
    const double tpr = tpr_at(*b, 1e-4);
    monotone = monotone && tpr >= previous;
    previous = tpr;
    detail += " T=" + std::to_string(b->config.length) + ":" + fmt(tpr);
  }
  return {monotone, detail};
}

Verdict criterion_robustness() {
  std::vector<std::vector<TrialOutcome>> outcomes;
  for (double lambda : {0.8, 1.0}) {
    TrialConfig cfg = base_config();
    cfg.scheme.lambda = lambda;
    cfg.attack = RandomReplaceAttack{0.3};
    outcomes.push_back(Simulator(cfg, secret()).watermarked_outcomes());
  }
  const double weak = median_log10_p(outcomes[0]);
  const double strong = median_log10_p(outcomes[1]);
  const Paired test = paired_sign_test(outcomes[0], outcomes[1]);
  return {weak <= strong && test.p < 0.05,
          "epsilon=0.3 median log10 p: lambda0.8=" + fmt(weak) + " lambda1.0=" + fmt(strong) + "; wins " +
              std::to_string(test.wins) + ", losses " + std::to_string(test.losses) + ", sign test p=" + fmt(test.p)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the CLI, returning its exit status; stdout goes to `out`.
int run_cli(const std::string& args, const std::filesystem::path& out) {
  const std::string cmd = std::string(WMENS_CLI_PATH) + " " + args + " >" + out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict criterion_determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("wmens_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string model = " --vocab 200 --length 60 --layers 6 --secret " + std::string(64, 'e');
  const std::string small = model + " --trials 40";
  const std::string tokens = (dir / "tokens.txt").string();
  const std::vector<std::pair<std::string, std::string>> runs{
      {"verify", "verify --no-timing --battery 5"},
      {"simulate", "simulate" + small + " --tokens-out " + tokens},
      {"simulate-dipmark", "simulate" + small + " --family dipmark --epsilon 0.2 --threshold-mode empirical"},
      {"sweep", "sweep" + small + " --axis lambda --grid 0.5,1"},
      {"trace", "trace" + model + " --trace-trials 3"},
  };
  bool ok = true;
  std::string detail;
  for (const auto& [name, args] : runs) {
    const bool has_threads = name != "verify";
    const int a = run_cli(args + (has_threads ? " --threads 1" : ""), dir / "a.out");
    const int b = run_cli(args + (has_threads ? " --threads 4" : ""), dir / "b.out");
    const bool same = a == 0 && b == 0 && slurp(dir / "a.out") == slurp(dir / "b.out");
    ok = ok && same;
    detail += " " + name + (same ? "=identical" : "=DIFFERENT");
    if (a != 0 || b != 0) detail += "(exit " + std::to_string(a) + "/" + std::to_string(b) + ")";
  }
  const std::string detect = "detect --vocab 200 --layers 6 --secret " + std::string(64, 'e') + " " + tokens;
  const int a = run_cli(detect, dir / "a.out");
  const int b = run_cli(detect, dir / "b.out");
  const bool same = a == 0 && b == 0 && slurp(dir / "a.out") == slurp(dir / "b.out");
  ok = ok && same;
  detail += std::string(" detect") + (same ? "=identical" : "=DIFFERENT");
  fs::remove_all(dir);
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wmens acceptance criteria"};
  std::vector<int> only;
  app.add_option("--support", source_params().support, "source row support (0 = whole vocabulary)")
      ->capture_default_str();
  app.add_option("--beta", source_params().beta, "source Dirichlet concentration")->capture_default_str();
  app.add_option("--only", only, "run only these criteria (1-9)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  std::setvbuf(stdout, nullptr, _IONBF, 0);
  std::printf("source: vocab=%zu support=%zu beta=%s seed=%llu\n", source_params().vocab, source_params().support,
              format_double(source_params().beta).c_str(),
              static_cast<unsigned long long>(source_params().seed));
  auto selected = [&](int index) { return only.empty() || std::find(only.begin(), only.end(), index) != only.end(); };
  int failures = 0;
  int run = 0;
  auto report = [&](int index, const char* title, const std::function<Verdict()>& body) {
    if (!selected(index)) return;
    ++run;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = body();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", index, title, v.detail.c_str(),
                seconds_since(t0));
  };

  std::vector<CheckResult> checks;
  double verify_seconds = 0.0;
  if (selected(1) || selected(2) || selected(3)) {
    const auto t0 = Clock::now();
    checks = run_verification(VerifyOptions{});
    verify_seconds = seconds_since(t0);
  }
  report(1, "distortion-free under exhaustive keys",
         [&] { return criterion_distortion_free(checks, verify_seconds); });
  report(2, "green ratio closed form and entropy bound", [&] { return criterion_green_ratio(checks); });
  report(3, "entropy and green-ratio inequalities", [&] { return criterion_theorems(checks); });
  report(4, "null calibration", criterion_null_calibration);
  report(5, "per-layer entropy and green mass", criterion_layer_shape);
  SweepResult lambda_sweep;
  report(6, "interior lambda beats lambda=1", [&] { return criterion_lambda_sweep(lambda_sweep); });
  report(7, "TPR non-decreasing in T", [&] {
    if (lambda_sweep.points.empty()) {
      TrialConfig cfg = base_config();
      return criterion_length(run_battery(cfg, secret()));
    }
    return criterion_length(lambda_sweep.points.back());
  });
  report(8, "robustness to random replacement", criterion_robustness);
  report(9, "byte-identical reruns", criterion_determinism);
  std::printf("%d of %d criteria failed\n", failures, run);
  return failures == 0 ? 0 : 1;
}
