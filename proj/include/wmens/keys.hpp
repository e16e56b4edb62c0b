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

#include <sodium.h>

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wmens/errors.hpp"
#include "wmens/prob.hpp"
#include "wmens/rng.hpp"

namespace wmens {

// Left padding for context windows shorter than the configured width. Never a
// valid vocabulary index.
inline constexpr Token kSentinelToken = 0xffffffffu;

inline constexpr int kMinContextWidth = 1;
inline constexpr int kMaxContextWidth = 8;

inline constexpr const char* kMasterSecretEnv = "WMENS_MASTER_SECRET";

/// 256-bit watermark secret. Loaded from hex; there is intentionally no way to
/// print it back.
class MasterSecret {
 public:
  static constexpr std::size_t kBytes = 32;

  static MasterSecret from_hex(std::string_view hex) {
    if (hex.size() != 2 * kBytes) {
      throw ConfigError("master secret must be 64 hex characters");
    }
    MasterSecret s;
    for (std::size_t i = 0; i < kBytes; ++i) {
      const int hi = nibble(hex[2 * i]);
      const int lo = nibble(hex[2 * i + 1]);
      if (hi < 0 || lo < 0) throw ConfigError("master secret contains a non-hex character");
      s.bytes_[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return s;
  }

  // Deterministic secret for simulations run without a configured key.
  static MasterSecret from_seed(std::uint64_t seed) {
    MasterSecret s;
    for (std::size_t w = 0; w < kBytes / 8; ++w) {
      const std::uint64_t word = derive_seed(seed, 0x5ec2e7, w);
      std::memcpy(s.bytes_.data() + 8 * w, &word, 8);
    }
    return s;
  }

  static std::optional<MasterSecret> from_env() {
    const char* value = std::getenv(kMasterSecretEnv);
    if (value == nullptr || *value == '\0') return std::nullopt;
    return from_hex(value);
  }

  std::span<const std::uint8_t, kBytes> bytes() const noexcept { return bytes_; }

  friend bool operator==(const MasterSecret&, const MasterSecret&) = default;

 private:
  static int nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  }

  std::array<std::uint8_t, kBytes> bytes_{};
};

struct Raw128 {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;
  friend bool operator==(const Raw128&, const Raw128&) = default;
};

/// Watermark key of one (position, layer). `raw` depends only on the secret,
/// the layer index and the context digest, so detection recovers it exactly
/// from the observed tokens.
struct LayerKey {
  int layer = 0;
  std::size_t position = 0;
  std::uint64_t context_digest = 0;
  Raw128 raw;
};

// Domain separation tags for the objects derived from a LayerKey.
enum class KeyDomain : std::uint64_t {
  kLayerKey = 0x6c617965726b6579ULL,
  kPartition = 0x7061727469746e31ULL,
  kPermutation = 0x7065726d75746531ULL,
  kChannel = 0x6368616e6e656c31ULL,
};

/// Last `width` tokens of `prefix`, left-padded with kSentinelToken.
inline std::vector<Token> context_window(std::span<const Token> prefix, int width) {
  if (width < kMinContextWidth || width > kMaxContextWidth) {
    throw ConfigError("context width must be in [1, 8]");
  }
  const auto w = static_cast<std::size_t>(width);
  std::vector<Token> window(w, kSentinelToken);
  const std::size_t take = std::min(w, prefix.size());
  std::copy(prefix.end() - static_cast<std::ptrdiff_t>(take), prefix.end(),
            window.end() - static_cast<std::ptrdiff_t>(take));
  return window;
}

// Unkeyed 64-bit digest of a context window; the window length is mixed in
// so windows of different widths never collide structurally.
inline std::uint64_t context_digest(std::span<const Token> window) {
  std::uint64_t h = mix64(0x636f6e7465787431ULL ^ window.size());
  for (Token t : window) h = mix64(h + kGolden * (static_cast<std::uint64_t>(t) + 1));
  return h;
}

namespace detail {

inline void ensure_sodium() {
  static const bool ready = [] {
    if (sodium_init() < 0) throw std::runtime_error("libsodium failed to initialize");
    return true;
  }();
  (void)ready;
}

// SipHash-2-4 with 128-bit output, keyed by the first half of the secret; the
// second half is part of the message.
inline Raw128 keyed_prf(const MasterSecret& master, std::uint64_t tag, std::uint64_t a,
                        std::uint64_t b) {
  ensure_sodium();
  std::array<unsigned char, 16 + 3 * 8> msg{};
  const auto secret = master.bytes();
  std::memcpy(msg.data(), secret.data() + 16, 16);
  std::memcpy(msg.data() + 16, &tag, 8);
  std::memcpy(msg.data() + 24, &a, 8);
  std::memcpy(msg.data() + 32, &b, 8);
  std::array<unsigned char, crypto_shorthash_siphashx24_BYTES> out{};
  crypto_shorthash_siphashx24(out.data(), msg.data(), msg.size(), secret.data());
  Raw128 r;
  std::memcpy(&r.lo, out.data(), 8);
  std::memcpy(&r.hi, out.data() + 8, 8);
  return r;
}

}  // namespace detail

inline LayerKey derive_layer_key(const MasterSecret& master, int layer,
                                 std::uint64_t context_digest, std::size_t position = 0) {
  if (layer < 0) throw ParameterError("layer index must be non-negative");
  LayerKey key;
  key.layer = layer;
  key.position = position;
  key.context_digest = context_digest;
  key.raw = detail::keyed_prf(master, static_cast<std::uint64_t>(KeyDomain::kLayerKey),
                              static_cast<std::uint64_t>(layer), context_digest);
  return key;
}

inline LayerKey derive_layer_key(const MasterSecret& master, int layer,
                                 std::span<const Token> window, std::size_t position = 0) {
  return derive_layer_key(master, layer, context_digest(window), position);
}

/// Counter-mode SplitMix64 stream seeded from a LayerKey and a domain tag.
/// word(i) is random access; next() walks the same sequence.
class KeyStream {
 public:
  KeyStream(const LayerKey& key, KeyDomain domain)
      : seed_(mix64(key.raw.lo ^ mix64(key.raw.hi + static_cast<std::uint64_t>(domain)))) {}

  std::uint64_t word(std::uint64_t i) const noexcept { return mix64(seed_ + kGolden * (i + 1)); }
  std::uint64_t next() noexcept { return word(counter_++); }
  std::uint64_t below(std::uint64_t bound) {
    return bounded_draw(bound, [this] { return next(); });
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// Green flag of one token under a Bernoulli(1/2) partition: bit (t mod 64)
/// of stream word t / 64.
inline bool partition_bit(const KeyStream& stream, Token token) {
  return (stream.word(token >> 6) >> (token & 63u)) & 1u;
}

/// Key-dependent red/green split of the vocabulary; flags are i.i.d.
/// Bernoulli(1/2) across tokens.
class GreenPartition {
 public:
  static GreenPartition from_key(const LayerKey& key, std::size_t n) {
    const KeyStream stream(key, KeyDomain::kPartition);
    std::vector<std::uint8_t> flags(n);
    for (std::size_t t = 0; t < n; ++t) flags[t] = partition_bit(stream, static_cast<Token>(t));
    return GreenPartition(std::move(flags));
  }

  explicit GreenPartition(std::vector<std::uint8_t> flags) : flags_(std::move(flags)) {}

  std::size_t size() const noexcept { return flags_.size(); }
  bool green(Token t) const { return flags_.at(t) != 0; }
  std::size_t green_count() const {
    return static_cast<std::size_t>(std::count(flags_.begin(), flags_.end(), std::uint8_t{1}));
  }
  std::span<const std::uint8_t> flags() const noexcept { return flags_; }

 private:
  std::vector<std::uint8_t> flags_;
};

/// Bijection on [0, N): order()[position] is the token at that position of the
/// permuted vocabulary, rank(token) its position.
class KeyedPermutation {
 public:
  static KeyedPermutation from_key(const LayerKey& key, std::size_t n) {
    KeyStream stream(key, KeyDomain::kPermutation);
    std::vector<Token> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Token>(i);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = stream.below(i);
      std::swap(order[i - 1], order[j]);
    }
    return KeyedPermutation(std::move(order));
  }

  static KeyedPermutation identity(std::size_t n) {
    std::vector<Token> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Token>(i);
    return KeyedPermutation(std::move(order));
  }

  explicit KeyedPermutation(std::vector<Token> order) : order_(std::move(order)), rank_(order_.size()) {
    std::vector<std::uint8_t> seen(order_.size(), 0);
    for (std::size_t pos = 0; pos < order_.size(); ++pos) {
      const Token t = order_[pos];
      if (t >= order_.size() || seen[t]) throw ParameterError("not a permutation");
      seen[t] = 1;
      rank_[t] = static_cast<Token>(pos);
    }
  }

  std::size_t size() const noexcept { return order_.size(); }
  Token at(std::size_t position) const { return order_.at(position); }
  std::size_t rank(Token token) const { return rank_.at(token); }
  std::span<const Token> order() const noexcept { return order_; }
  std::span<const Token> ranks() const noexcept { return rank_; }

  KeyedPermutation inverse() const { return KeyedPermutation(rank_); }

 private:
  std::vector<Token> order_;
  std::vector<Token> rank_;
};

inline void check_channel_count(int channels, std::size_t vocab) {
  if (channels < 2) throw ConfigError("channel count l must be at least 2");
  if (vocab % static_cast<std::size_t>(channels) != 0) {
    throw ConfigError("channel count l=" + std::to_string(channels) +
                      " does not divide the vocabulary size " + std::to_string(vocab));
  }
}

/// Selected channel in [0, l), uniform under uniform keys.
inline int channel_select(const LayerKey& key, int channels) {
  if (channels < 2) throw ConfigError("channel count l must be at least 2");
  KeyStream stream(key, KeyDomain::kChannel);
  return static_cast<int>(stream.below(static_cast<std::uint64_t>(channels)));
}

}  // namespace wmens
