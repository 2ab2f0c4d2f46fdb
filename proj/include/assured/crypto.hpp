// Copyright 2026 The Assured Update Authors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may not
// use this file except in compliance with the License. You may obtain a copy of
// the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
// License for the specific language governing permissions and limitations under
// the License.

#pragma once

#include <compare>
#include <cstdint>
#include <string>

#include "assured/bytes.hpp"

namespace assured::crypto {

inline constexpr std::size_t kDigestSize = 32;
inline constexpr std::size_t kPublicKeySize = 32;
inline constexpr std::size_t kSeedSize = 32;
inline constexpr std::size_t kSignatureSize = 64;
inline constexpr std::size_t kMacKeySize = 32;
inline constexpr std::size_t kMacTagSize = 32;
inline constexpr std::size_t kNonceSize = 16;

/// SHA-256 output.
struct Digest {
  FixedBytes<kDigestSize> bytes{};
  auto operator<=>(const Digest&) const = default;
};

/// Ed25519 public key, 32-byte compressed point encoding.
struct PublicKey {
  FixedBytes<kPublicKeySize> bytes{};
  auto operator<=>(const PublicKey&) const = default;
};

struct Signature {
  FixedBytes<kSignatureSize> bytes{};
  auto operator<=>(const Signature&) const = default;
};

/// Ed25519 key pair. The public half is always derived from the seed.
class SigningKeyPair {
 public:
  static SigningKeyPair from_seed(const FixedBytes<kSeedSize>& seed);

  const FixedBytes<kSeedSize>& seed() const noexcept { return seed_; }
  const PublicKey& public_key() const noexcept { return public_; }

 private:
  SigningKeyPair(const FixedBytes<kSeedSize>& seed, const PublicKey& pub)
      : seed_(seed), public_(pub) {}

  FixedBytes<kSeedSize> seed_;
  PublicKey public_;
};

struct MacKey {
  FixedBytes<kMacKeySize> bytes{};
  auto operator<=>(const MacKey&) const = default;
};

struct MacTag {
  FixedBytes<kMacTagSize> bytes{};
  auto operator<=>(const MacTag&) const = default;
};

using Nonce = FixedBytes<kNonceSize>;

struct SessionKeys {
  FixedBytes<32> enc_key{};
  FixedBytes<32> mac_key{};
  auto operator<=>(const SessionKeys&) const = default;
};

Digest hash(ByteView data);

/// Key id used in role metadata: the digest of the raw public key bytes.
Digest key_id(const PublicKey& key);

Signature sign(const SigningKeyPair& key, ByteView message);

/// Ed25519 verification. Every call increments the verification counter,
/// including calls that reject.
bool verify(const PublicKey& pub, ByteView message, const Signature& sig);

/// Same as verify() over raw encodings; wrong lengths reject without
/// touching the primitive (still counted).
bool verify_encoded(ByteView pub, ByteView message, ByteView sig);

/// Process-wide count of verify() calls.
std::uint64_t verification_count() noexcept;
void reset_verification_count() noexcept;

/// Measures the verify() calls made while the scope is alive.
class VerificationScope {
 public:
  VerificationScope() : start_(verification_count()) {}
  std::uint64_t delta() const noexcept { return verification_count() - start_; }

 private:
  std::uint64_t start_;
};

MacTag mac(const MacKey& key, ByteView message);

/// Constant-time equality for tags.
bool tags_equal(const MacTag& a, const MacTag& b) noexcept;

enum class KeyDerivationError { BadNonceLength };

/// enc_key = HMAC(master, "ASSURED-ENC" || controller_nonce || device_nonce),
/// mac_key likewise with "ASSURED-MAC". Throws Failure<KeyDerivationError>
/// unless both nonces are kNonceSize bytes.
SessionKeys derive_session_keys(const MacKey& master, ByteView controller_nonce,
                                ByteView device_nonce);

// Authenticated channel frames:
//   sequence (8, BE) || payload length (4, BE) || AES-256-CTR ciphertext ||
//   HMAC-SHA256 tag over everything before it.
// The CTR initial counter block is the sequence followed by eight zero bytes,
// so one key pair must never seal two frames with the same sequence. The two
// directions of a session keep this apart by setting kResponderSequenceBit on
// every frame the responder sends.

inline constexpr std::size_t kFrameHeaderSize = 12;
inline constexpr std::size_t kFrameOverhead = kFrameHeaderSize + kMacTagSize;
inline constexpr std::uint64_t kResponderSequenceBit = std::uint64_t{1} << 63;

struct ChannelFrame {
  Bytes bytes;
  bool operator==(const ChannelFrame&) const = default;
};

enum class ChannelError { AuthFailure, ReplayOrReorder, Malformed };
using ChannelFailure = Failure<ChannelError>;
std::string to_string(ChannelError e);

ChannelFrame seal(const SessionKeys& keys, std::uint64_t sequence, ByteView plaintext);

/// Checks the tag, then the sequence, then decrypts. Throws ChannelFailure.
Bytes open(const SessionKeys& keys, std::uint64_t expected_sequence,
           const ChannelFrame& frame);

/// Deterministic byte generator (HMAC-SHA256 in counter mode over a seed).
/// Everything random in the system draws from one of these so that a seed
/// fixes the whole run.
class Drbg {
 public:
  explicit Drbg(ByteView seed);
  static Drbg from_seed(std::uint64_t seed, std::string_view label);
  /// Seeded from the operating system's CSPRNG.
  static Drbg from_os();

  void fill(std::span<std::uint8_t> out);
  template <std::size_t N>
  FixedBytes<N> bytes() {
    FixedBytes<N> out{};
    fill(out);
    return out;
  }
  std::uint64_t next_u64();

 private:
  MacKey key_;
  std::uint64_t counter_ = 0;
};

SigningKeyPair generate_signing_key(Drbg& rng);
MacKey generate_mac_key(Drbg& rng);

}  // namespace assured::crypto
