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

#include <cstdint>
#include <string>

#include "assured/bytes.hpp"
#include "assured/crypto.hpp"

namespace assured::auth {

/// OEM-imposed installation conditions. A zero model or id matches any
/// device; a zero required_prev_version imposes no ordering.
struct Constraints {
  std::uint64_t device_model = 0;
  std::uint64_t device_id = 0;
  std::uint64_t required_prev_version = 0;
  std::uint64_t new_version = 1;

  bool operator==(const Constraints&) const = default;
};

inline constexpr std::size_t kConstraintsSize = 32;
/// hash(32) || size(8) || constraints(32): the bytes the OEM signs.
inline constexpr std::size_t kSignedRegionSize = crypto::kDigestSize + 8 + kConstraintsSize;
inline constexpr std::size_t kTokenSize = kSignedRegionSize + crypto::kSignatureSize;

static_assert(kSignedRegionSize == 72);
static_assert(kTokenSize == 136);

/// Throws std::invalid_argument unless new_version >= 1 and, when an
/// ordering requirement is present, new_version > required_prev_version.
void validate(const Constraints& c);

struct AuthorizationToken {
  crypto::Digest artifact_hash;
  std::uint64_t artifact_size = 0;
  Constraints constraints;
  crypto::Signature signature;

  bool operator==(const AuthorizationToken&) const = default;
};

using TokenBytes = FixedBytes<kTokenSize>;

AuthorizationToken issue_token(const crypto::SigningKeyPair& oem_key, ByteView artifact,
                               const Constraints& constraints);

TokenBytes encode_token(const AuthorizationToken& token);
/// Throws MalformedInput unless `bytes` is exactly kTokenSize long.
AuthorizationToken decode_token(ByteView bytes);

/// The first kSignedRegionSize bytes of the encoding.
Bytes signed_region(const AuthorizationToken& token);

enum class TokenVerdict { Accept, HashMismatch, SizeMismatch, BadSignature };
std::string to_string(TokenVerdict v);

/// Size, then hash, then the one signature check. Mismatched artifacts
/// return before any public-key operation.
TokenVerdict verify_token(const crypto::PublicKey& oem_pub, ByteView artifact,
                          const AuthorizationToken& token);

enum class ConstraintVerdict {
  Accept,
  WrongModel,
  WrongDevice,
  VersionNotMonotonic,
  PatchOrderViolation,
};
std::string to_string(ConstraintVerdict v);

ConstraintVerdict evaluate_constraints(const Constraints& c, std::uint64_t device_model,
                                       std::uint64_t device_id, std::uint64_t installed_version);

/// Token plus artifact. Constructing one checks nothing; envelopes may be
/// adversarial until verify_token accepts them.
struct UpdateEnvelope {
  AuthorizationToken token;
  Bytes artifact;

  bool operator==(const UpdateEnvelope&) const = default;
};

inline constexpr std::array<std::uint8_t, 4> kEnvelopeMagic = {'A', 'S', 'R', 'D'};
inline constexpr std::size_t kEnvelopeHeaderSize = kEnvelopeMagic.size() + kTokenSize + 8;

UpdateEnvelope build_envelope(const AuthorizationToken& token, Bytes artifact);

/// "ASRD" || token(136) || artifact length (8, BE) || artifact.
Bytes serialize_envelope(const UpdateEnvelope& envelope);
/// Throws MalformedInput on bad magic, truncation, or a length field that
/// disagrees with the bytes that follow it.
UpdateEnvelope parse_envelope(ByteView bytes);

}  // namespace assured::auth
