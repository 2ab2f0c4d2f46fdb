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

#include <array>
#include <filesystem>
#include <optional>
#include <set>

#include "assured/authorization.hpp"
#include "assured/crypto.hpp"
#include "assured/metadata.hpp"
#include "assured/protocol.hpp"

namespace assured::device {

enum class InstallMode : std::uint8_t { DualBank = 0, SingleBank = 1 };
enum class BankId : std::uint8_t { A = 0, B = 1 };

std::string to_string(InstallMode m);

struct Identity {
  std::uint64_t model = 0;
  std::uint64_t id = 0;
  bool operator==(const Identity&) const = default;
};

/// Everything installed at manufacture. The two keys go to secure storage
/// and are never readable through the Device interface afterwards.
struct Provisioning {
  Identity identity;
  crypto::PublicKey oem_public;
  crypto::MacKey k_att;
  InstallMode mode = InstallMode::DualBank;
  /// Trust anchor for on-device TUF verification (comparison mode only).
  std::optional<metadata::RoleMetadata> tuf_anchor;
  std::uint64_t rng_seed = 0;
};

enum class SessionError { WrongDevice, NotConfirmed };
using SessionFailure = Failure<SessionError>;

using AttestFailure = Failure<protocol::AttestError>;

/// Simulated constrained device. Single-threaded: one caller at a time.
class Device {
 public:
  /// Writes `factory_image` into bank A and marks it active. Throws
  /// std::invalid_argument if the image does not verify.
  static Device manufacture(const Provisioning& p, const auth::UpdateEnvelope& factory_image);

  /// Handshake step one: returns a fresh device nonce and derives the
  /// session keys. Any previous session is discarded.
  crypto::Nonce channel_accept(std::uint64_t device_id, const crypto::Nonce& controller_nonce);

  /// Handshake step two: checks the Controller's transcript frame (sequence
  /// 0) and answers with the device's own. Throws ChannelFailure.
  crypto::ChannelFrame confirm_channel(const crypto::ChannelFrame& controller_confirm);

  struct Delivery {
    protocol::InstallOutcome outcome;
    /// Sealed outcome; absent when the channel itself failed.
    std::optional<crypto::ChannelFrame> ack;
    /// Set when a frame failed to open.
    std::optional<crypto::ChannelError> channel_error;
  };

  /// Opens the frames in sequence, then verifies and installs the enclosed
  /// envelope. Channel failures end the session before anything is written.
  Delivery receive_update(std::span<const crypto::ChannelFrame> frames);

  /// An envelope that did not arrive over the channel. Always rejected.
  protocol::InstallOutcome receive_plaintext(ByteView envelope);

  /// TUF comparison mode: full metadata verification on the device, then
  /// the install path without the token check. Requires a tuf_anchor.
  protocol::InstallOutcome receive_tuf_update(const std::array<Bytes, 4>& metadata,
                                              metadata::Encoding encoding, ByteView envelope,
                                              std::uint64_t now);

  protocol::BootResult boot();

  /// Throws AttestFailure(RefusedReplay) for a nonce served before.
  protocol::AttestationReport attest(const crypto::Nonce& nonce);

  const Identity& identity() const noexcept { return identity_; }
  InstallMode mode() const noexcept { return mode_; }
  std::uint64_t installed_version() const noexcept { return installed_version_; }
  BankId active_bank() const noexcept { return active_; }
  bool replacement_required() const noexcept { return replacement_required_; }
  bool has_session() const noexcept { return session_.has_value() && session_->confirmed; }

  /// Simulated flash file: header || bank A || bank B || secure store.
  void save_flash(const std::filesystem::path& path) const;
  static Device load_flash(const std::filesystem::path& path);

 private:
  friend class FaultInjector;

  struct SecureStore {
    crypto::PublicKey oem_public;
    crypto::MacKey k_att;
    std::optional<metadata::RoleMetadata> tuf_anchor;
    metadata::LastSeen tuf_seen;
  };

  struct Bank {
    bool valid = false;
    std::uint64_t version = 0;
    auth::TokenBytes token{};
    Bytes artifact;
  };

  struct Session {
    crypto::SessionKeys keys;
    crypto::Digest transcript;
    bool confirmed = false;
    std::uint64_t rx = 0;
    std::uint64_t tx = 0;
  };

  struct FaultPlan {
    std::optional<int> power_loss_after_step;
    bool corrupt_next_write = false;
  };

  Device() : rng_(crypto::Drbg::from_seed(0, "device")) {}

  protocol::InstallOutcome install(const auth::AuthorizationToken& token, const Bytes& artifact,
                                   bool token_verified);
  protocol::InstallOutcome install_dual(const auth::AuthorizationToken& token,
                                        const Bytes& artifact);
  protocol::InstallOutcome install_single(const auth::AuthorizationToken& token,
                                          const Bytes& artifact);
  void checkpoint(int step);
  bool bank_bootable(const Bank& bank) const;
  protocol::InstallOutcome rejected(protocol::InstallReason reason) const;

  Identity identity_;
  InstallMode mode_ = InstallMode::DualBank;
  SecureStore secure_;
  std::array<Bank, 2> banks_;
  BankId active_ = BankId::A;
  std::uint64_t installed_version_ = 0;
  bool replacement_required_ = false;
  std::optional<Session> session_;
  std::set<crypto::Nonce> served_nonces_;
  std::uint64_t rng_seed_ = 0;
  std::uint64_t rng_epoch_ = 0;
  crypto::Drbg rng_;
  FaultPlan faults_;
};

/// Physical access to a device's flash, for fault-injection tests and the
/// harness. Protocol code never uses it.
class FaultInjector {
 public:
  static constexpr int kDualBankWriteSteps = 6;
  static constexpr int kSingleBankWriteSteps = 5;

  /// Power is lost right after write step `step` (1-based) of the next install.
  static void power_loss_after(Device& d, std::optional<int> step);
  /// The next artifact written to flash has one bit flipped.
  static void corrupt_next_write(Device& d);
  static void flip_bank_bit(Device& d, BankId bank, std::size_t bit);
};

}  // namespace assured::device
