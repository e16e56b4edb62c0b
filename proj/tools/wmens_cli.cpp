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

// wmens: command-line driver for verification, simulation and detection.
//
//   wmens verify   [--config FILE] [--no-timing]
//   wmens simulate [--config FILE] [--out FILE] [--tokens-out FILE] ...
//   wmens sweep    [--config FILE] --axis lambda --grid 0.2,0.4,... [--out FILE]
//   wmens trace    [--config FILE] [--trace-trials N] [--out FILE]
//   wmens detect   [--config FILE] TOKENS_FILE
//
// Settings come from built-in defaults, then the JSON config file, then
// command-line flags, each overriding the previous. Exit codes: 0 ok or
// detected, 1 verification failure, 2 usage or I/O error, 3 not detected.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wmens/wmens.hpp"

namespace {

using nlohmann::json;
using namespace wmens;

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNotDetected = 3;

enum class Kind { kString, kInt, kReal, kBool, kRealList, kIntList };

struct KeySpec {
  std::string name;
  std::string flag;
  Kind kind;
  json def;
  std::string default_text;  // shown in --help when it differs from def
  std::string help;
  std::vector<std::string> commands;
};

const std::vector<std::string> kSim{"simulate", "sweep", "trace"};
const std::vector<std::string> kSimDetect{"simulate", "sweep", "trace", "detect"};

std::vector<std::string> join(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = [] {
    const MarkovSourceParams src;
    const TrialConfig trial;
    const SchemeConfig scheme;
    const VerifyOptions verify;
    return std::vector<KeySpec>{
        {"family", "--family", Kind::kString, "tournament", "", "tournament | dipmark | channel",
         join(kSimDetect, {})},
        {"n_layers", "--layers", Kind::kInt, nullptr, "30 for tournament, 5 otherwise", "ensemble layers n",
         kSimDetect},
        {"lambda", "--lambda", Kind::kReal, scheme.lambda, "", "weakening strength in [0, 1]", kSimDetect},
        {"alpha", "--alpha", Kind::kReal, scheme.alpha, "", "dipmark shift in [0, 0.5]",
         join(kSimDetect, {"verify"})},
        {"l", "--channels", Kind::kInt, scheme.channels, "", "channel count l (channel family)", kSimDetect},
        {"context_width", "--context-width", Kind::kInt, scheme.context_width, "",
         "preceding tokens hashed into each key (1-8)", kSimDetect},
        {"experimental_channels", "--experimental-channels", Kind::kBool, false, "",
         "allow l > 2 after an exhaustive unbiasedness check", kSim},
        {"vocab", "--vocab", Kind::kInt, src.vocab, "", "vocabulary size N", kSimDetect},
        {"beta", "--beta", Kind::kReal, src.beta, "", "Dirichlet concentration of source rows", kSim},
        {"support", "--support", Kind::kInt, src.support, "",
         "tokens with non-zero mass per source row (0 = whole vocabulary)", kSim},
        {"source_seed", "--source-seed", Kind::kInt, src.seed, "", "seed of the synthetic source", kSim},
        {"length", "--length", Kind::kInt, trial.length, "", "tokens per sequence T", kSim},
        {"trials", "--trials", Kind::kInt, trial.trials, "", "watermarked and null trials per battery",
         {"simulate", "sweep"}},
        {"trace_trials", "--trace-trials", Kind::kInt, 4, "", "sequences written by trace", {"trace"}},
        {"seed", "--seed", Kind::kInt, trial.seed, "", "experiment seed", join(kSim, {"verify"})},
        {"fpr_grid", "--fpr-grid", Kind::kRealList, trial.fpr_grid, "", "FPR thresholds (comma separated)",
         {"simulate", "sweep", "detect"}},
        {"epsilon", "--epsilon", Kind::kReal, 0.0, "", "random token replacement rate (0 = no attack)",
         {"simulate", "sweep"}},
        {"threshold_mode", "--threshold-mode", Kind::kString, "analytic", "",
         "analytic (normal tail) | empirical (null quantile)", {"simulate", "sweep"}},
        {"threads", "--threads", Kind::kInt, 1, "", "worker threads (results do not depend on it)", kSim},
        {"secret", "--secret", Kind::kString, "", "$WMENS_MASTER_SECRET, else derived from seed",
         "64 hex characters of master secret", kSimDetect},
        {"out", "--out", Kind::kString, "-", "", "output file (- = stdout)",
         {"simulate", "sweep", "trace", "verify"}},
        {"tokens_out", "--tokens-out", Kind::kString, "", "", "also write trial 0 tokens for detect",
         {"simulate"}},
        {"axis", "--axis", Kind::kString, "lambda", "", "lambda | alpha | length | epsilon", {"sweep"}},
        {"grid", "--grid", Kind::kRealList, std::vector<double>{0.2, 0.4, 0.6, 0.8, 1.0}, "",
         "sweep values (comma separated)", {"sweep"}},
        {"entropy_bits", "--entropy-bits", Kind::kBool, false, "", "report trace entropy in bits, not nats",
         {"trace"}},
        {"tokens", "--tokens", Kind::kString, "", "", "file of newline-separated token ids", {"detect"}},
        {"flags_out", "--flags-out", Kind::kString, "", "", "also write the position,layer,flag CSV",
         {"detect"}},
        {"verify_battery", "--battery", Kind::kInt, verify.battery, "",
         "random distributions per vocabulary size", {"verify"}},
        {"mandatory_unbiased_l", "--mandatory-unbiased-l", Kind::kIntList, verify.mandatory_unbiased_l, "",
         "channel counts that must pass the unbiasedness check", {"verify"}},
        {"no_timing", "--no-timing", Kind::kBool, false, "", "report runtime_ms as 0 for byte-stable output",
         {"verify"}},
    };
  }();
  return specs;
}

bool applies(const KeySpec& k, const std::string& command) {
  return std::find(k.commands.begin(), k.commands.end(), command) != k.commands.end();
}

const KeySpec* find_key(const std::string& name) {
  for (const KeySpec& k : key_specs()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

std::string describe_default(const KeySpec& k) {
  if (!k.default_text.empty()) return k.default_text;
  if (k.def.is_string()) return k.def.get<std::string>().empty() ? "\"\"" : k.def.get<std::string>();
  if (k.kind == Kind::kRealList || k.kind == Kind::kIntList) {
    std::string s;
    for (const auto& v : k.def) {
      if (!s.empty()) s += ",";
      s += k.kind == Kind::kRealList ? format_double(v.get<double>()) : std::to_string(v.get<long long>());
    }
    return s;
  }
  if (k.def.is_number_float()) return format_double(k.def.get<double>());
  return k.def.dump();
}

double parse_real(const std::string& key, std::string_view s) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw ConfigError("'" + key + "' expects a number, got '" + std::string(s) + "'");
  }
  return v;
}

long long parse_int(const std::string& key, std::string_view s) {
  long long v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw ConfigError("'" + key + "' expects an integer, got '" + std::string(s) + "'");
  }
  return v;
}

json parse_flag_value(const KeySpec& k, const std::string& text) {
  switch (k.kind) {
    case Kind::kString: return text;
    case Kind::kInt: return parse_int(k.name, text);
    case Kind::kReal: return parse_real(k.name, text);
    case Kind::kBool: return text == "true" || text == "1";
    case Kind::kRealList:
    case Kind::kIntList: {
      json list = json::array();
      std::stringstream in(text);
      std::string item;
      while (std::getline(in, item, ',')) {
        if (k.kind == Kind::kRealList) {
          list.push_back(parse_real(k.name, item));
        } else {
          list.push_back(parse_int(k.name, item));
        }
      }
      return list;
    }
  }
  return nullptr;
}

// Type check of a value read from the config file.
void check_file_value(const KeySpec& k, const json& v) {
  auto fail = [&](const char* what) { throw ConfigError("config key '" + k.name + "' must be " + what); };
  switch (k.kind) {
    case Kind::kString:
      if (!v.is_string()) fail("a string");
      break;
    case Kind::kInt:
      if (!v.is_number_integer()) fail("an integer");
      break;
    case Kind::kReal:
      if (!v.is_number()) fail("a number");
      break;
    case Kind::kBool:
      if (!v.is_boolean()) fail("true or false");
      break;
    case Kind::kRealList:
    case Kind::kIntList:
      if (!v.is_array()) fail("an array");
      for (const auto& x : v) {
        if (k.kind == Kind::kRealList ? !x.is_number() : !x.is_number_integer()) {
          fail(k.kind == Kind::kRealList ? "an array of numbers" : "an array of integers");
        }
      }
      break;
  }
}

json read_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path + " at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
  return j;
}

/// Flag storage for one subcommand.
struct CommandOptions {
  std::string name;
  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;
  std::map<std::string, CLI::Option*> options;
};

void register_options(CommandOptions& c) {
  c.app->add_option("--config", c.config_path, "JSON config file (keys as listed below)");
  std::string footer = "Config keys (JSON name = default):\n";
  for (const KeySpec& k : key_specs()) {
    if (!applies(k, c.name)) continue;
    const std::string help = k.help + " [config: " + k.name + "]";
    CLI::Option* opt = nullptr;
    if (k.kind == Kind::kBool) {
      opt = c.app->add_flag(k.flag, c.switches[k.name], help);
    } else {
      opt = c.app->add_option(k.flag, c.values[k.name], help)->default_str(describe_default(k));
    }
    c.options[k.name] = opt;
    footer += "  " + k.name + " = " + describe_default(k) + "\n";
  }
  c.app->footer(footer);
}

/// defaults < config file < flags.
json effective_config(const CommandOptions& c) {
  json eff = json::object();
  for (const KeySpec& k : key_specs()) {
    if (applies(k, c.name)) eff[k.name] = k.def;
  }
  if (!c.config_path.empty()) {
    const json file = read_config_file(c.config_path);
    for (const auto& [key, value] : file.items()) {
      const KeySpec* k = find_key(key);
      if (k == nullptr) throw ConfigError("unknown config key '" + key + "'");
      if (!applies(*k, c.name)) continue;
      check_file_value(*k, value);
      eff[key] = value;
    }
  }
  for (const auto& [name, opt] : c.options) {
    if (opt->count() == 0) continue;
    const KeySpec* k = find_key(name);
    eff[name] = k->kind == Kind::kBool ? json(c.switches.at(name)) : parse_flag_value(*k, c.values.at(name));
  }
  if (eff.contains("n_layers") && eff["n_layers"].is_null()) {
    eff["n_layers"] = family_from_string(eff["family"].get<std::string>()) == Family::kTournament ? 30 : 5;
  }
  return eff;
}

std::size_t as_size(const json& eff, const char* key) {
  const long long v = eff.at(key).get<long long>();
  if (v < 0) throw ConfigError(std::string("'") + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

SchemeConfig scheme_from(const json& eff) {
  json j;
  for (const char* key : {"family", "n_layers", "lambda", "alpha", "l", "context_width"}) j[key] = eff.at(key);
  return j.get<SchemeConfig>();
}

TrialConfig trial_from(const json& eff) {
  TrialConfig t;
  t.scheme = scheme_from(eff);
  t.source.vocab = as_size(eff, "vocab");
  t.source.beta = eff.at("beta").get<double>();
  t.source.support = as_size(eff, "support");
  t.source.seed = eff.at("source_seed").get<std::uint64_t>();
  t.length = as_size(eff, "length");
  if (eff.contains("trials")) t.trials = as_size(eff, "trials");
  t.seed = eff.at("seed").get<std::uint64_t>();
  if (eff.contains("fpr_grid")) t.fpr_grid = eff.at("fpr_grid").get<std::vector<double>>();
  if (eff.contains("epsilon") && eff.at("epsilon").get<double>() != 0.0) {
    t.attack = RandomReplaceAttack{eff.at("epsilon").get<double>()};
  }
  if (eff.contains("threshold_mode")) {
    t.threshold_mode = threshold_mode_from_string(eff.at("threshold_mode").get<std::string>());
  }
  const long long threads = eff.at("threads").get<long long>();
  if (threads < 1 || threads > 1024) throw ConfigError("'threads' must be between 1 and 1024");
  t.threads = static_cast<unsigned>(threads);
  t.experimental_channels = eff.at("experimental_channels").get<bool>();
  t.validate();
  return t;
}

// Digest of everything that determines results: output locations, the
// secret and the thread count are excluded.
std::string config_digest(const std::string& command, json eff) {
  for (const char* key : {"secret", "out", "tokens_out", "flags_out", "tokens", "threads"}) eff.erase(key);
  eff["command"] = command;
  return hex_digest(eff.dump());
}

std::string comment_line(const std::string& command, const json& eff, const std::string& extra = "") {
  std::string line = "# wmens " + std::string(kVersion) + " command=" + command +
                     " config_digest=" + config_digest(command, eff) +
                     " seed=" + std::to_string(eff.at("seed").get<std::uint64_t>());
  if (!extra.empty()) line += " " + extra;
  return line + "\n";
}

std::optional<MasterSecret> configured_secret(const json& eff) {
  const std::string hex = eff.at("secret").get<std::string>();
  if (!hex.empty()) return MasterSecret::from_hex(hex);
  return MasterSecret::from_env();
}

MasterSecret simulation_secret(const json& eff) {
  if (auto s = configured_secret(eff)) return *s;
  std::cerr << "note: no master secret configured; using one derived from the seed\n";
  return MasterSecret::from_seed(eff.at("seed").get<std::uint64_t>());
}

// Writes to stdout for "-" and atomically otherwise. Returns the stream
// that should carry human-readable summaries.
std::ostream& emit(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::cout << content << std::flush;
    return std::cerr;
  }
  atomic_write(path, content);
  return std::cout;
}

std::string summary(const MetricsTable& table) {
  const MetricsRow* coarsest = nullptr;
  for (const MetricsRow& r : table.rows) {
    if (coarsest == nullptr || r.fpr > coarsest->fpr) coarsest = &r;
  }
  if (coarsest == nullptr) return "no rows";
  return coarsest->scheme + " T=" + std::to_string(coarsest->length) +
         " epsilon=" + format_double(coarsest->epsilon) +
         " median_log10_p=" + format_double(coarsest->median_log10_p) + " tpr@" +
         format_double(coarsest->fpr) + "=" + format_double(coarsest->tpr);
}

int cmd_verify(const json& eff) {
  VerifyOptions opt;
  opt.battery = as_size(eff, "verify_battery");
  opt.seed = eff.at("seed").get<std::uint64_t>();
  opt.dipmark_alpha = eff.at("alpha").get<double>();
  opt.mandatory_unbiased_l = eff.at("mandatory_unbiased_l").get<std::vector<int>>();
  if (opt.battery < 1) throw ConfigError("'verify_battery' must be at least 1");
  for (int l : opt.mandatory_unbiased_l) {
    if (l < 2 || l > static_cast<int>(oracle::kPermutationCap)) {
      throw ConfigError("mandatory_unbiased_l entries must lie in [2, 8]");
    }
  }
  const bool timing = !eff.at("no_timing").get<bool>();

  const std::vector<CheckResult> checks = run_verification(opt);
  json report = json::array();
  for (const CheckResult& c : checks) {
    report.push_back({{"name", c.name},
                      {"status", std::string(to_string(c.status))},
                      {"margin", c.margin},
                      {"key_space_size", c.key_space_size},
                      {"runtime_ms", timing ? c.runtime_ms : 0.0},
                      {"detail", c.detail}});
  }
  const std::string out = eff.at("out").get<std::string>();
  emit(out, report.dump(2) + "\n");
  if (all_mandatory_pass(checks)) return kExitOk;
  for (const CheckResult& c : checks) {
    if (c.status == CheckStatus::kFail) std::cerr << "verification failed: " << c.name << " " << c.detail << "\n";
  }
  return kExitVerifyFailed;
}

std::string tokens_text(const std::vector<Token>& tokens) {
  std::string text;
  for (Token t : tokens) text += std::to_string(t) + "\n";
  return text;
}

int cmd_simulate(const json& eff) {
  const TrialConfig cfg = trial_from(eff);
  const Simulator sim(cfg, simulation_secret(eff));
  const BatteryResult result = sim.run_battery();
  std::ostringstream csv;
  csv << comment_line("simulate", eff);
  result.table.write_csv(csv);
  std::ostream& log = emit(eff.at("out").get<std::string>(), csv.str());
  const std::string tokens_out = eff.at("tokens_out").get<std::string>();
  if (!tokens_out.empty()) atomic_write(tokens_out, tokens_text(sim.generate_watermarked(0, false).tokens));
  log << summary(result.table) << "\n";
  return kExitOk;
}

int cmd_sweep(const json& eff) {
  const TrialConfig cfg = trial_from(eff);
  const SweepAxis axis = sweep_axis_from_string(eff.at("axis").get<std::string>());
  const std::vector<double> grid = eff.at("grid").get<std::vector<double>>();
  const SweepResult result = sweep(cfg, axis, grid, simulation_secret(eff));
  std::ostringstream csv;
  csv << comment_line("sweep", eff);
  result.table.write_csv(csv);
  std::ostream& log = emit(eff.at("out").get<std::string>(), csv.str());
  for (const BatteryResult& point : result.points) log << summary(point.table) << "\n";
  return kExitOk;
}

int cmd_trace(const json& eff) {
  const TrialConfig cfg = trial_from(eff);
  const Simulator sim(cfg, simulation_secret(eff));
  const bool bits = eff.at("entropy_bits").get<bool>();
  const std::size_t trials = as_size(eff, "trace_trials");
  if (trials < 1) throw ConfigError("'trace_trials' must be at least 1");

  std::vector<GenerationTrace> traces(trials);
  detail::parallel_for(trials, cfg.threads, [&](std::size_t i) { traces[i] = sim.generate_watermarked(i); });

  std::ostringstream csv;
  csv << comment_line("trace", eff, bits ? "entropy_unit=bits" : "entropy_unit=nats");
  csv << kTraceHeader << '\n';
  const std::size_t n = static_cast<std::size_t>(cfg.scheme.n_layers);
  std::vector<double> entropy(n, 0.0), green(n, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    GenerationTrace& trace = traces[t];
    for (LayerStats& s : trace.stats) {
      if (bits) s.entropy_after /= std::numbers::ln2;
    }
    write_trace_csv_rows(csv, t, trace);
    for (std::size_t j = 0; j < trace.tokens.size(); ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        entropy[i] += trace.at(j, i).entropy_after;
        green[i] += trace.at(j, i).green_mass;
      }
    }
  }
  std::ostream& log = emit(eff.at("out").get<std::string>(), csv.str());
  const double cells = static_cast<double>(trials * cfg.length);
  log << cfg.scheme.label() << " trials=" << trials << " mean_entropy layer1=" << format_double(entropy.front() / cells)
      << " layer" << n << "=" << format_double(entropy.back() / cells)
      << " mean_green_mass layer1=" << format_double(green.front() / cells) << " layer" << n << "="
      << format_double(green.back() / cells) << "\n";
  return kExitOk;
}

std::vector<Token> read_tokens(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read token file " + path);
  std::vector<Token> tokens;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    const std::string_view s(line.data() + first, last - first + 1);
    unsigned long long v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size() || v >= kSentinelToken) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": not a token id: '" + std::string(s) + "'");
    }
    tokens.push_back(static_cast<Token>(v));
  }
  if (tokens.empty()) throw EmptyInputError("token file " + path + " holds no tokens");
  return tokens;
}

int cmd_detect(const json& eff) {
  const std::string path = eff.at("tokens").get<std::string>();
  if (path.empty()) throw ConfigError("detect needs a token file (positional or --tokens)");
  const std::optional<MasterSecret> secret = configured_secret(eff);
  if (!secret) {
    throw ConfigError("detect needs the master secret: set 'secret' or " + std::string(kMasterSecretEnv));
  }
  const SchemeConfig scheme = scheme_from(eff);
  const std::size_t vocab = as_size(eff, "vocab");
  const std::vector<double> thresholds = eff.at("fpr_grid").get<std::vector<double>>();
  for (double f : thresholds) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("FPR thresholds must lie in (0, 1)");
  }
  const std::vector<Token> tokens = read_tokens(path);
  const GreenFlagMatrix flags = green_flags(tokens, *secret, scheme, vocab);
  const DetectionReport report = report_from_flags(flags, scheme.gamma(), thresholds);
  const std::string flags_out = eff.at("flags_out").get<std::string>();
  if (!flags_out.empty()) {
    std::ostringstream csv;
    write_flag_csv(csv, flags);
    atomic_write(flags_out, csv.str());
  }
  std::cout << to_json(report).dump(2) << "\n";
  return report.detected() ? kExitOk : kExitNotDetected;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wmens: distortion-free watermark ensembles on a synthetic source"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> commands{
      {"verify", "exhaustive-key checks of unbiasedness and the entropy/green-ratio inequalities"},
      {"simulate", "one battery of watermarked and null trials; metrics CSV"},
      {"sweep", "batteries over a grid of lambda, alpha, length or epsilon; metrics CSV"},
      {"trace", "per-position, per-layer entropy and green mass; trace CSV"},
      {"detect", "detect the watermark in a token file; report JSON"},
  };
  std::vector<CommandOptions> subs(commands.size());
  for (std::size_t i = 0; i < commands.size(); ++i) {
    subs[i].name = commands[i].first;
    subs[i].app = app.add_subcommand(commands[i].first, commands[i].second);
    register_options(subs[i]);
  }
  // detect also takes the token file positionally.
  std::string positional_tokens;
  CommandOptions& detect = subs.back();
  detect.app->add_option("tokens_file", positional_tokens, "file of newline-separated token ids");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    for (CommandOptions& c : subs) {
      if (!c.app->parsed()) continue;
      json eff = effective_config(c);
      if (c.name == "verify") return cmd_verify(eff);
      if (c.name == "simulate") return cmd_simulate(eff);
      if (c.name == "sweep") return cmd_sweep(eff);
      if (c.name == "trace") return cmd_trace(eff);
      if (!positional_tokens.empty()) eff["tokens"] = positional_tokens;
      return cmd_detect(eff);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
