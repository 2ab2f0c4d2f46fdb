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

#include "assured/protocol.hpp"

namespace assured::protocol {

Bytes ok_reply(ByteView payload) {
  ByteWriter w;
  w.u8(kOk).raw(payload);
  return std::move(w).take();
}

Bytes error_reply(const ErrorReply& e) {
  ByteWriter w;
  w.u8(kError).u8(static_cast<std::uint8_t>(e.domain)).u8(e.code).raw(as_bytes(e.message));
  return std::move(w).take();
}

Reply parse_reply(ByteView bytes) {
  ByteReader r(bytes);
  Reply reply;
  std::uint8_t status = r.u8();
  if (status == kOk) {
    reply.ok = true;
    auto rest = r.raw(r.remaining());
    reply.payload.assign(rest.begin(), rest.end());
  } else if (status == kError) {
    reply.error.domain = static_cast<ErrorDomain>(r.u8());
    reply.error.code = r.u8();
    auto rest = r.raw(r.remaining());
    reply.error.message.assign(rest.begin(), rest.end());
  } else {
    throw MalformedInput("unknown reply status", 0);
  }
  return reply;
}

std::string to_string(InstallReason r) {
  switch (r) {
    case InstallReason::None: return "None";
    case InstallReason::NoSession: return "NoSession";
    case InstallReason::ChannelFailure: return "ChannelFailure";
    case InstallReason::MalformedEnvelope: return "MalformedEnvelope";
    case InstallReason::NoImplicitAuth: return "NoImplicitAuth";
    case InstallReason::HashMismatch: return "HashMismatch";
    case InstallReason::SizeMismatch: return "SizeMismatch";
    case InstallReason::BadSignature: return "BadSignature";
    case InstallReason::WrongModel: return "WrongModel";
    case InstallReason::WrongDevice: return "WrongDevice";
    case InstallReason::VersionNotMonotonic: return "VersionNotMonotonic";
    case InstallReason::PatchOrderViolation: return "PatchOrderViolation";
    case InstallReason::BankVerifyFailed: return "BankVerifyFailed";
    case InstallReason::PowerLoss: return "PowerLoss";
    case InstallReason::MetadataRejected: return "MetadataRejected";
    case InstallReason::UnknownTarget: return "UnknownTarget";
  }
  return "?";
}

std::string to_string(const InstallOutcome& o) {
  switch (o.kind) {
    case InstallOutcome::Kind::Installed: return "Installed:" + std::to_string(o.version);
    case InstallOutcome::Kind::Rejected:
      return "Rejected:" + to_string(o.reason) + (o.replacement_required ? "+replace" : "");
    case InstallOutcome::Kind::RolledBack: return "RolledBack:" + to_string(o.reason);
  }
  return "?";
}

Bytes encode(const InstallOutcome& o) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(o.kind)).u8(static_cast<std::uint8_t>(o.reason)).u64(o.version);
  w.u8(o.replacement_required ? 1 : 0).u32(o.pk_verifications);
  return std::move(w).take();
}

InstallOutcome decode_install_outcome(ByteView bytes) {
  ByteReader r(bytes);
  InstallOutcome o;
  auto kind = r.u8();
  if (kind > 2) throw MalformedInput("unknown outcome kind", 0);
  o.kind = static_cast<InstallOutcome::Kind>(kind);
  auto reason = r.u8();
  if (reason > static_cast<std::uint8_t>(InstallReason::UnknownTarget)) {
    throw MalformedInput("unknown install reason", 1);
  }
  o.reason = static_cast<InstallReason>(reason);
  o.version = r.u64();
  o.replacement_required = r.u8() != 0;
  o.pk_verifications = r.u32();
  r.expect_end();
  return o;
}

std::string to_string(const BootResult& b) {
  if (b.running) {
    return "Running:" + std::to_string(b.version) + (b.fell_back ? "+fallback" : "");
  }
  return b.reason == BootResult::Reason::NeedsReplacement ? "Halted:NeedsReplacement"
                                                          : "Halted:NoValidImage";
}

Bytes encode(const BootResult& b) {
  ByteWriter w;
  w.u8(b.running ? 1 : 0).u64(b.version).u8(static_cast<std::uint8_t>(b.reason));
  w.u8(b.fell_back ? 1 : 0);
  return std::move(w).take();
}

BootResult decode_boot_result(ByteView bytes) {
  ByteReader r(bytes);
  BootResult b;
  b.running = r.u8() != 0;
  b.version = r.u64();
  auto reason = r.u8();
  if (reason > 2) throw MalformedInput("unknown boot reason", 9);
  b.reason = static_cast<BootResult::Reason>(reason);
  b.fell_back = r.u8() != 0;
  r.expect_end();
  return b;
}

Bytes report_mac_input(std::uint64_t device_id, const crypto::Nonce& nonce,
                       const crypto::Digest& measurement) {
  ByteWriter w;
  w.u64(device_id).raw(nonce).raw(measurement.bytes);
  return std::move(w).take();
}

Bytes encode(const AttestationReport& r) {
  ByteWriter w;
  w.raw(report_mac_input(r.device_id, r.nonce, r.measurement)).raw(r.tag.bytes);
  return std::move(w).take();
}

AttestationReport decode_report(ByteView bytes) {
  ByteReader r(bytes);
  AttestationReport rep;
  rep.device_id = r.u64();
  rep.nonce = r.fixed<crypto::kNonceSize>();
  rep.measurement.bytes = r.fixed<crypto::kDigestSize>();
  rep.tag.bytes = r.fixed<crypto::kMacTagSize>();
  r.expect_end();
  return rep;
}

crypto::Digest handshake_transcript(std::uint64_t device_id, const crypto::Nonce& controller_nonce,
                                    const crypto::Nonce& device_nonce) {
  ByteWriter w;
  w.raw(as_bytes("ASSURED-HS")).u64(device_id).raw(controller_nonce).raw(device_nonce);
  return crypto::hash(w.bytes());
}

Bytes encode_frames(std::span<const crypto::ChannelFrame> frames) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(frames.size()));
  for (const auto& f : frames) w.u32(static_cast<std::uint32_t>(f.bytes.size())).raw(f.bytes);
  return std::move(w).take();
}

std::vector<crypto::ChannelFrame> decode_frames(ByteReader& r) {
  std::uint32_t n = r.u32();
  std::vector<crypto::ChannelFrame> frames;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto len = r.u32();
    auto b = r.raw(len);
    frames.push_back({Bytes(b.begin(), b.end())});
  }
  return frames;
}

}  // namespace assured::protocol
