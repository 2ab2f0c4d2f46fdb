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
#include <optional>
#include <set>
#include <vector>

#include "assured/authorization.hpp"
#include "assured/metadata.hpp"
#include "assured/protocol.hpp"
#include "assured/repository.hpp"

namespace assured::controller {

/// What the Controller knows about an enrolled device.
struct DeviceRecord {
  std::uint64_t device_id = 0;
  std::uint64_t device_model = 0;
  crypto::MacKey k_att;
  std::uint64_t expected_version = 0;
  crypto::Digest expected_digest;

  bool operator==(const DeviceRecord&) const = default;
};

struct MaintenanceWindow {
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  bool operator==(const MaintenanceWindow&) const = default;
};

struct LocalPolicy {
  /// Inclusive; absent means always open.
  std::optional<MaintenanceWindow> window;
  /// Models that may be updated. Empty allows every model. Envelopes whose
  /// token is not model-specific (model 0) are never blocked by this list.
  std::set<std::uint64_t> allowed_models;

  bool operator==(const LocalPolicy&) const = default;
};

/// An envelope that passed full-chain verification and byte-equality against
/// its signed targets record. Only Controller::sync creates these.
class VerifiedEnvelope {
 public:
  const std::string& name() const noexcept { return name_; }
  const auth::UpdateEnvelope& envelope() const noexcept { return envelope_; }
  const Bytes& bytes() const noexcept { return bytes_; }

 private:
  friend class Controller;
  VerifiedEnvelope(std::string name, auth::UpdateEnvelope env, Bytes bytes)
      : name_(std::move(name)), envelope_(std::move(env)), bytes_(std::move(bytes)) {}

  std::string name_;
  auth::UpdateEnvelope envelope_;
  Bytes bytes_;
};

enum class ControllerError {
  EnvelopeMismatch,
  EnvelopeMissing,
  UnknownDevice,
  ChannelSetupFailed,
  DeliveryFailed,
  NotVerified,
};
using ControllerFailure = Failure<ControllerError>;
std::string to_string(ControllerError e);

enum class DeferReason { OutsideWindow, ModelBlocked };
std::string to_string(DeferReason r);

struct PolicyDecision {
  bool approved = false;
  DeferReason reason = DeferReason::OutsideWindow;
};

/// Controller side of an authenticated channel to one device.
class Session {
 public:
  std::uint64_t device_id() const noexcept { return device_id_; }

 private:
  friend class Controller;
  std::uint64_t device_id_ = 0;
  crypto::SessionKeys keys_;
  std::uint64_t tx_ = 0;
  std::uint64_t rx_ = 0;
};

struct DeliveryResult {
  bool delivered = false;
  /// Valid when delivered.
  protocol::InstallOutcome outcome;
  /// "DeliveryFailed:<cause>" when not delivered; the cause is the device's
  /// error, NoAcknowledgment, or BadAcknowledgment.
  std::string failure;
};

enum class AttestationFailure { BadTag, WrongNonce, WrongMeasurement, Missing };
std::string to_string(AttestationFailure f);

struct AttestationResult {
  bool verified = false;
  AttestationFailure failure = AttestationFailure::Missing;
  std::optional<protocol::AttestationReport> report;
};

/// Largest plaintext carried in one channel frame during delivery.
inline constexpr std::size_t kDefaultFramePayload = 64 * 1024;

class Controller {
 public:
  Controller(metadata::RoleMetadata trusted_root, LocalPolicy policy, std::uint64_t rng_seed);

  /// Manufacture-time K_Att installation plus the factory image's identity.
  void enroll(const DeviceRecord& record);
  const DeviceRecord& device(std::uint64_t device_id) const;
  const std::map<std::uint64_t, DeviceRecord>& devices() const noexcept { return registry_; }

  /// Fetches and verifies the four roles, then fetches each new or changed
  /// target's envelope and checks it byte-for-byte against its record.
  /// Throws metadata::ParseError, metadata::ChainFailure, or
  /// ControllerFailure(EnvelopeMismatch | EnvelopeMissing).
  std::vector<VerifiedEnvelope> sync(repo::MetadataSource& source, std::uint64_t now);

  /// Verified envelopes not yet installed everywhere, by target name.
  const std::map<std::string, VerifiedEnvelope>& pending() const noexcept { return pending_; }
  const VerifiedEnvelope& pending(const std::string& name) const;

  PolicyDecision policy_gate(const VerifiedEnvelope& envelope, std::uint64_t now) const;

  /// Two-message nonce exchange followed by transcript confirmation frames.
  /// Throws ControllerFailure(ChannelSetupFailed | UnknownDevice).
  Session open_channel(std::uint64_t device_id, protocol::DeviceLink& link);

  /// Seals the envelope into frames of at most `frame_payload` bytes. A
  /// delivered envelope is the Controller's approval of it.
  DeliveryResult deliver(Session& session, protocol::DeviceLink& link,
                         const VerifiedEnvelope& envelope,
                         std::size_t frame_payload = kDefaultFramePayload);

  /// Fresh-nonce challenge; the report must carry a valid tag under the
  /// device's K_Att, the issued nonce, and `expected` as its measurement.
  AttestationResult request_attestation(std::uint64_t device_id, protocol::DeviceLink& link,
                                        const crypto::Digest& expected);
  /// As above, expecting the digest recorded at the last confirmed install.
  AttestationResult request_attestation(std::uint64_t device_id, protocol::DeviceLink& link);

  const metadata::LastSeen& last_seen() const noexcept { return last_seen_; }
  const metadata::RoleMetadata& trusted_root() const noexcept { return trusted_root_; }
  const LocalPolicy& policy() const noexcept { return policy_; }
  void set_policy(LocalPolicy policy) { policy_ = std::move(policy); }
  const std::vector<crypto::Nonce>& issued_nonces() const noexcept { return issued_nonces_; }

  /// Single-file state: "ACTL" || trusted root || versions || policy ||
  /// registry || seen records || pending envelopes || nonce log.
  void save(const std::filesystem::path& path) const;
  static Controller load(const std::filesystem::path& path);

 private:
  Controller() = default;

  metadata::RoleMetadata trusted_root_;
  metadata::LastSeen last_seen_;
  LocalPolicy policy_;
  std::map<std::uint64_t, DeviceRecord> registry_;
  std::map<std::string, auth::TokenBytes> seen_records_;
  std::map<std::string, VerifiedEnvelope> pending_;
  std::vector<crypto::Nonce> issued_nonces_;
  std::uint64_t rng_seed_ = 0;
  std::uint64_t rng_epoch_ = 0;
  crypto::Drbg rng_ = crypto::Drbg::from_seed(0, "controller");
};

}  // namespace assured::controller
