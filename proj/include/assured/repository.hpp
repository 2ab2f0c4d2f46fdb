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

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "assured/authorization.hpp"
#include "assured/metadata.hpp"

namespace assured::repo {

/// Lifetimes, in logical ticks, given to freshly signed metadata.
struct ExpiryPolicy {
  std::uint64_t root = 10000;
  std::uint64_t targets = 1000;
  std::uint64_t snapshot = 100;
  std::uint64_t timestamp = 10;
};

/// Keys the repository keeps online. Root keys are deliberately absent:
/// only init_repository() and rotate_root() take them.
struct OnlineKeys {
  std::vector<crypto::SigningKeyPair> targets;
  std::vector<crypto::SigningKeyPair> snapshot;
  std::vector<crypto::SigningKeyPair> timestamp;
};

/// What the untrusted mirror does to the bytes it serves.
struct TamperPolicy {
  enum class Kind { None, FlipBitInEnvelope, ServeStaleMetadata, SubstituteArtifact, DropEnvelope };
  Kind kind = Kind::None;
  /// Bit index into the serialized envelope, for FlipBitInEnvelope.
  std::uint64_t offset = 0;

  bool operator==(const TamperPolicy&) const = default;
};

std::string to_string(const TamperPolicy& p);
/// Parses "none", "flip:<bit>", "stale", "substitute", "drop".
TamperPolicy parse_tamper_policy(std::string_view text);

struct RepositoryState {
  metadata::Encoding encoding = metadata::Encoding::Json;
  ExpiryPolicy expiry;
  OnlineKeys keys;
  metadata::MetadataSet current;
  /// Every set the repository has published, oldest first; the last entry
  /// equals `current`.
  std::vector<metadata::MetadataSet> history;
  std::map<std::string, Bytes> envelopes;
  std::uint64_t clock = 0;
  TamperPolicy tamper;
};

enum class RepoError { NotFound, PublishRejected };
using RepoFailure = Failure<RepoError>;
std::string to_string(RepoError e);

/// Fresh repository at version 1 for every role, with an empty targets set.
RepositoryState init_repository(std::span<const crypto::SigningKeyPair> root_keys,
                                const metadata::RootBody& root_body, OnlineKeys keys,
                                metadata::Encoding encoding, std::uint64_t clock = 0,
                                ExpiryPolicy expiry = {});

/// Records the envelope under `name`: targets, snapshot and timestamp are
/// each re-signed at version + 1. Throws RepoFailure(PublishRejected) when
/// the envelope does not parse, its token disagrees with its artifact, or
/// the name is unusable.
RepositoryState publish(RepositoryState state, const std::string& name, ByteView envelope);

/// Re-signs the timestamp (version + 1, new expiry) over the current snapshot.
RepositoryState refresh_timestamp(RepositoryState state);

RepositoryState advance_clock(RepositoryState state, std::uint64_t ticks);

RepositoryState set_tamper_policy(RepositoryState state, TamperPolicy policy);

/// Publishes a new root (version + 1) signed by `signing_keys`, which should
/// cover the thresholds of both the outgoing and incoming root roles, then
/// re-signs snapshot and timestamp.
RepositoryState rotate_root(RepositoryState state,
                            std::span<const crypto::SigningKeyPair> signing_keys,
                            const metadata::RootBody& new_body, OnlineKeys new_keys);

/// Mirror reads. Both apply the active tamper policy.
Bytes fetch_metadata(const RepositoryState& state, metadata::RoleKind role);
Bytes fetch_envelope(const RepositoryState& state, const std::string& name);

/// What a client sees of a repository. Implemented in-process by
/// StateMirror and across a process boundary by the transport layer.
class MetadataSource {
 public:
  virtual ~MetadataSource() = default;
  virtual metadata::Encoding encoding() const = 0;
  virtual Bytes fetch_metadata(metadata::RoleKind role) = 0;
  virtual Bytes fetch_envelope(const std::string& name) = 0;
};

class StateMirror : public MetadataSource {
 public:
  explicit StateMirror(const RepositoryState& state) : state_(&state) {}
  metadata::Encoding encoding() const override { return state_->encoding; }
  Bytes fetch_metadata(metadata::RoleKind role) override {
    return repo::fetch_metadata(*state_, role);
  }
  Bytes fetch_envelope(const std::string& name) override {
    return repo::fetch_envelope(*state_, name);
  }

 private:
  const RepositoryState* state_;
};

// On-disk layout under a repository directory:
//   root.N.meta, targets.N.meta   every published version
//   snapshot.meta, timestamp.meta current versions
//   history/snapshot.N.meta, history/timestamp.N.meta
//   envelopes/<name>.env
//   repository.json                encoding, clock, expiry, tamper policy
//   keys/online.json               targets/snapshot/timestamp seeds
// Root key seeds are never written here.
void save_repository(const RepositoryState& state, const std::filesystem::path& dir);
RepositoryState load_repository(const std::filesystem::path& dir);

}  // namespace assured::repo
