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
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "assured/authorization.hpp"
#include "assured/bytes.hpp"
#include "assured/crypto.hpp"

namespace assured::metadata {

enum class RoleKind : std::uint8_t { Root = 1, Targets = 2, Snapshot = 3, Timestamp = 4 };

inline constexpr std::array<RoleKind, 4> kAllRoles = {RoleKind::Root, RoleKind::Targets,
                                                      RoleKind::Snapshot, RoleKind::Timestamp};

std::string to_string(RoleKind role);
/// Inverse of to_string(); throws std::invalid_argument for unknown names.
RoleKind role_from_string(std::string_view name);

/// Keys authorized for one role and how many of them must sign.
struct RoleKeys {
  std::vector<crypto::PublicKey> keys;
  std::uint32_t threshold = 1;

  bool operator==(const RoleKeys&) const = default;
};

struct RootBody {
  RoleKeys root;
  RoleKeys targets;
  RoleKeys snapshot;
  RoleKeys timestamp;

  const RoleKeys& for_role(RoleKind role) const;
  bool operator==(const RootBody&) const = default;
};

/// Target names are at most this many bytes in every encoding.
inline constexpr std::size_t kMaxTargetName = 32;

struct TargetRecord {
  std::string name;
  crypto::Digest hash;
  std::uint64_t size = 0;
  auth::AuthorizationToken token;

  bool operator==(const TargetRecord&) const = default;
};

/// Entries are kept sorted by name with no duplicates.
struct TargetsBody {
  std::vector<TargetRecord> entries;

  const TargetRecord* find(std::string_view name) const;
  bool operator==(const TargetsBody&) const = default;
};

struct SnapshotBody {
  std::uint64_t root_version = 0;
  std::uint64_t targets_version = 0;

  bool operator==(const SnapshotBody&) const = default;
};

struct TimestampBody {
  std::uint64_t snapshot_version = 0;
  crypto::Digest snapshot_hash;

  bool operator==(const TimestampBody&) const = default;
};

using RoleBody = std::variant<RootBody, TargetsBody, SnapshotBody, TimestampBody>;

struct KeySignature {
  crypto::Digest key_id;
  crypto::Signature signature;

  bool operator==(const KeySignature&) const = default;
};

struct RoleMetadata {
  std::uint64_t version = 1;
  /// Logical-clock tick after which the metadata is no longer valid.
  std::uint64_t expires = 0;
  RoleBody body;
  std::vector<KeySignature> signatures;

  RoleKind role() const;
  bool operator==(const RoleMetadata&) const = default;

  template <typename Body>
  const Body& as() const {
    return std::get<Body>(body);
  }
};

/// Checks body invariants, sorts target entries, and adds one signature per
/// key over signed_bytes(). Throws std::invalid_argument on an empty key list,
/// duplicate keys, version 0, or an invalid body.
RoleMetadata build_and_sign(RoleBody body, std::uint64_t version, std::uint64_t expires,
                            std::span<const crypto::SigningKeyPair> keys);

enum class Encoding { Json, FixedBinary };
std::string to_string(Encoding e);

/// The region every signature covers: the FixedBinary encoding of role,
/// version, expires and body. It is the same for both wire encodings, so
/// metadata can be converted between them without re-signing.
Bytes signed_bytes(const RoleMetadata& meta);

Bytes serialize(const RoleMetadata& meta, Encoding encoding);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " (at byte " + std::to_string(position) + ")"),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

RoleMetadata parse(ByteView bytes, Encoding encoding);

/// Number of Json-mode parse() calls made by this process.
std::uint64_t json_parse_count() noexcept;

/// Digest that timestamp metadata records for a snapshot: the hash of the
/// snapshot's full FixedBinary encoding, signatures included.
crypto::Digest snapshot_digest(const RoleMetadata& snapshot);

struct MetadataSet {
  RoleMetadata root;
  RoleMetadata targets;
  RoleMetadata snapshot;
  RoleMetadata timestamp;

  const RoleMetadata& get(RoleKind role) const;
  bool operator==(const MetadataSet&) const = default;
};

/// Highest version of each role a client has accepted so far.
struct LastSeen {
  std::uint64_t root = 0;
  std::uint64_t targets = 0;
  std::uint64_t snapshot = 0;
  std::uint64_t timestamp = 0;

  std::uint64_t get(RoleKind role) const;
  bool operator==(const LastSeen&) const = default;
};

enum class ChainError { ThresholdNotMet, Expired, VersionRollback, BindingMismatch };
std::string to_string(ChainError e);

class ChainFailure : public Failure<ChainError> {
 public:
  ChainFailure(ChainError code, RoleKind role, const std::string& what)
      : Failure<ChainError>(code, what), role_(role) {}
  RoleKind role() const noexcept { return role_; }

 private:
  RoleKind role_;
};

struct VerifiedTargets {
  TargetsBody targets;
  /// Versions of the accepted set, suitable as the next LastSeen.
  LastSeen versions;
};

/// Full client-side validation of a metadata set against a trust anchor.
/// Checks root (against the anchor's root keys), then timestamp, snapshot and
/// targets, each for threshold, expiry (expires > now), rollback against
/// `last_seen`, and the version/hash bindings between them. Signature checks
/// stop as soon as a role's threshold is met, so a set signed at exactly the
/// thresholds costs sum(thresholds) verifications. Throws ChainFailure.
VerifiedTargets verify_full_chain(const RoleMetadata& trusted_root, const MetadataSet& set,
                                  std::uint64_t now, const LastSeen& last_seen = {});

}  // namespace assured::metadata
