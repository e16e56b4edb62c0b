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

#include <cstddef>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "wmens/errors.hpp"
#include "wmens/keys.hpp"

namespace wmens {

enum class Family { kTournament, kDipmark, kChannel };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::kTournament: return "tournament";
    case Family::kDipmark: return "dipmark";
    case Family::kChannel: return "channel";
  }
  return "unknown";
}

inline Family family_from_string(std::string_view name) {
  if (name == "tournament") return Family::kTournament;
  if (name == "dipmark") return Family::kDipmark;
  if (name == "channel") return Family::kChannel;
  throw ConfigError("unknown watermark family '" + std::string(name) +
                    "' (expected tournament, dipmark or channel)");
}

/// Reweight family and strength of a homogeneous n-layer ensemble.
struct SchemeConfig {
  Family family = Family::kTournament;
  int n_layers = 30;
  double lambda = 1.0;   // mixing strength of the weakened wrapper
  double alpha = 0.5;    // dipmark CDF shift
  int channels = 2;      // channel family block count l
  int context_width = 4;

  // Null-hypothesis green probability of the family's green rule.
  double gamma() const {
    return family == Family::kChannel ? 1.0 / static_cast<double>(channels) : 0.5;
  }

  void validate() const {
    if (n_layers < 1) throw ConfigError("n_layers must be at least 1");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(alpha >= 0.0 && alpha <= 0.5)) throw ConfigError("alpha must lie in [0, 0.5]");
    if (channels < 2) throw ConfigError("l must be at least 2");
    if (context_width < kMinContextWidth || context_width > kMaxContextWidth) {
      throw ConfigError("context_width must be in [1, 8]");
    }
  }

  // Checks that only matter once the vocabulary is known: channel blocks must
  // tile the vocabulary, and the dipmark upper-half green list is exactly
  // half of it only for even N.
  void validate_for_vocab(std::size_t vocab) const {
    validate();
    if (vocab < 2) throw ConfigError("vocabulary size must be at least 2");
    if (family == Family::kChannel) check_channel_count(channels, vocab);
    if (family == Family::kDipmark && vocab % 2 != 0) {
      throw ConfigError("dipmark detection needs an even vocabulary size");
    }
  }

  std::string label() const {
    std::ostringstream out;
    out << to_string(family) << "-n" << n_layers;
    switch (family) {
      case Family::kTournament: out << "-lambda" << lambda; break;
      case Family::kDipmark: out << "-alpha" << alpha << "-lambda" << lambda; break;
      case Family::kChannel: out << "-l" << channels << "-lambda" << lambda; break;
    }
    return out.str();
  }

  friend bool operator==(const SchemeConfig&, const SchemeConfig&) = default;
};

inline void to_json(nlohmann::json& j, const SchemeConfig& c) {
  j = nlohmann::json{{"family", std::string(to_string(c.family))},
                     {"n_layers", c.n_layers},
                     {"lambda", c.lambda},
                     {"alpha", c.alpha},
                     {"l", c.channels},
                     {"context_width", c.context_width}};
}

// Missing fields keep their defaults; unknown fields are rejected by name.
inline void from_json(const nlohmann::json& j, SchemeConfig& c) {
  if (!j.is_object()) throw ConfigError("scheme config must be a JSON object");
  static const std::set<std::string> known{"family", "n_layers", "lambda",
                                           "alpha",  "l",        "context_width"};
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) throw ConfigError("unknown scheme field '" + item.key() + "'");
  }
  try {
    if (j.contains("family")) c.family = family_from_string(j.at("family").get<std::string>());
    if (j.contains("n_layers")) c.n_layers = j.at("n_layers").get<int>();
    if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("l")) c.channels = j.at("l").get<int>();
    if (j.contains("context_width")) c.context_width = j.at("context_width").get<int>();
  } catch (const nlohmann::json::type_error& e) {
    throw ConfigError(std::string("scheme config: ") + e.what());
  }
  c.validate();
}

}  // namespace wmens
