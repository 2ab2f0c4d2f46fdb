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
#include <optional>
#include <string>

#include "assured/bytes.hpp"
#include "assured/crypto.hpp"

// Messages exchanged between a Controller and a Device, and the result types
// both sides agree on. Every request is one type byte followed by a payload;
// every response is a status byte (kOk / kError) followed by a payload.
namespace assured::protocol {

enum class Request : std::uint8_t {
  Hello = 0x01,        // device_id(8) || controller_nonce(16)   -> device_nonce(16)
  Confirm = 0x02,      // sealed transcript frame                -> sealed transcript frame
  Update = 0x03,       // count(4) || (length(4) || frame)*       -> sealed InstallOutcome
  PlainUpdate = 0x04,  // serialized envelope                    -> InstallOutcome
  Attest = 0x05,       // nonce(16)                              -> AttestationReport
  Boot = 0x06,         //                                        -> BootResult
  TufUpdate = 0x07,    // now(8) || encoding(1) || 4 x (length(4) || metadata) || envelope
  // Harness-only: manufacture, physical fault injection, shutdown.
  Provision = 0x10,
  CorruptFlash = 0x11,
  Shutdown = 0x12,
};

inline constexpr std::uint8_t kOk = 0;
inline constexpr std::uint8_t kError = 1;

enum class ErrorDomain : std::uint8_t {
  Protocol = 0,
  Channel = 1,
  Attestation = 2,
  Session = 3,
  Repository = 4,
};

struct ErrorReply {
  ErrorDomain domain = ErrorDomain::Protocol;
  std::uint8_t code = 0;
  std::string message;
};

Bytes ok_reply(ByteView payload);
Bytes error_reply(const ErrorReply& e);

struct Reply {
  bool ok = false;
  Bytes payload;
  ErrorReply error;
};
/// Throws MalformedInput on an empty or unknown status.
Reply parse_reply(ByteView bytes);

/// Why a device declined (or could not complete) an installation.
enum class InstallReason : std::uint8_t {
  None = 0,
  NoSession,
  ChannelFailure,
  MalformedEnvelope,
  NoImplicitAuth,
  HashMismatch,
  SizeMismatch,
  BadSignature,
  WrongModel,
  WrongDevice,
  VersionNotMonotonic,
  PatchOrderViolation,
  BankVerifyFailed,
  PowerLoss,
  MetadataRejected,
  UnknownTarget,
};
std::string to_string(InstallReason r);

struct InstallOutcome {
  enum class Kind : std::uint8_t { Installed = 0, Rejected = 1, RolledBack = 2 };
  Kind kind = Kind::Rejected;
  InstallReason reason = InstallReason::None;
  /// Installed: the new version. Otherwise: the version still running.
  std::uint64_t version = 0;
  /// SingleBank only: the active image was overwritten and failed validation.
  bool replacement_required = false;
  /// Public-key verifications the device performed for this request.
  std::uint32_t pk_verifications = 0;

  bool operator==(const InstallOutcome&) const = default;
};
std::string to_string(const InstallOutcome& o);
Bytes encode(const InstallOutcome& o);
InstallOutcome decode_install_outcome(ByteView bytes);

struct BootResult {
  enum class Reason : std::uint8_t { None = 0, NoValidImage, NeedsReplacement };
  bool running = false;
  std::uint64_t version = 0;
  Reason reason = Reason::None;
  /// DualBank only: the active image failed and the other bank took over.
  bool fell_back = false;

  bool operator==(const BootResult&) const = default;
};
std::string to_string(const BootResult& b);
Bytes encode(const BootResult& b);
BootResult decode_boot_result(ByteView bytes);

struct AttestationReport {
  std::uint64_t device_id = 0;
  crypto::Nonce nonce{};
  crypto::Digest measurement;
  crypto::MacTag tag;

  bool operator==(const AttestationReport&) const = default;
};
inline constexpr std::size_t kReportSize = 8 + crypto::kNonceSize + crypto::kDigestSize +
                                           crypto::kMacTagSize;
/// device_id(8, BE) || nonce || measurement: the bytes the tag covers.
Bytes report_mac_input(std::uint64_t device_id, const crypto::Nonce& nonce,
                       const crypto::Digest& measurement);
Bytes encode(const AttestationReport& r);
AttestationReport decode_report(ByteView bytes);

enum class AttestError : std::uint8_t { RefusedReplay = 1 };

/// Handshake transcript both confirm frames commit to.
crypto::Digest handshake_transcript(std::uint64_t device_id, const crypto::Nonce& controller_nonce,
                                    const crypto::Nonce& device_nonce);
inline constexpr std::uint8_t kControllerConfirm = 'C';
inline constexpr std::uint8_t kDeviceConfirm = 'D';

Bytes encode_frames(std::span<const crypto::ChannelFrame> frames);
std::vector<crypto::ChannelFrame> decode_frames(ByteReader& r);

/// A request/response path to one device. An empty result means no reply
/// arrived (the message or its answer was lost).
class DeviceLink {
 public:
  virtual ~DeviceLink() = default;
  virtual std::optional<Bytes> exchange(ByteView request) = 0;
};

}  // namespace assured::protocol
