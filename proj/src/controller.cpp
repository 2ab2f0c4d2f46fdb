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

#include "assured/controller.hpp"

#include <fstream>

namespace assured::controller {

using metadata::RoleKind;

namespace {

constexpr std::array<std::uint8_t, 4> kStateMagic = {'A', 'C', 'T', 'L'};
constexpr std::uint8_t kStateFormat = 1;

[[noreturn]] void fail(ControllerError code, const std::string& what) {
  throw ControllerFailure(code, to_string(code) + ": " + what);
}

}  // namespace

std::string to_string(ControllerError e) {
  switch (e) {
    case ControllerError::EnvelopeMismatch: return "EnvelopeMismatch";
    case ControllerError::EnvelopeMissing: return "EnvelopeMissing";
    case ControllerError::UnknownDevice: return "UnknownDevice";
    case ControllerError::ChannelSetupFailed: return "ChannelSetupFailed";
    case ControllerError::DeliveryFailed: return "DeliveryFailed";
    case ControllerError::NotVerified: return "NotVerified";
  }
  return "?";
}

std::string to_string(DeferReason r) {
  return r == DeferReason::OutsideWindow ? "OutsideWindow" : "ModelBlocked";
}

std::string to_string(AttestationFailure f) {
  switch (f) {
    case AttestationFailure::BadTag: return "BadTag";
    case AttestationFailure::WrongNonce: return "WrongNonce";
    case AttestationFailure::WrongMeasurement: return "WrongMeasurement";
    case AttestationFailure::Missing: return "Missing";
  }
  return "?";
}

Controller::Controller(metadata::RoleMetadata trusted_root, LocalPolicy policy,
                       std::uint64_t rng_seed)
    : trusted_root_(std::move(trusted_root)),
      policy_(std::move(policy)),
      rng_seed_(rng_seed),
      rng_(crypto::Drbg::from_seed(rng_seed, "controller")) {
  if (trusted_root_.role() != RoleKind::Root) {
    throw std::invalid_argument("trust anchor must be root metadata");
  }
  if (policy_.window && policy_.window->start > policy_.window->end) {
    throw std::invalid_argument("maintenance window start after end");
  }
  last_seen_.root = trusted_root_.version;
}

void Controller::enroll(const DeviceRecord& record) { registry_[record.device_id] = record; }

const DeviceRecord& Controller::device(std::uint64_t device_id) const {
  auto it = registry_.find(device_id);
  if (it == registry_.end()) fail(ControllerError::UnknownDevice, std::to_string(device_id));
  return it->second;
}

std::vector<VerifiedEnvelope> Controller::sync(repo::MetadataSource& source, std::uint64_t now) {
  auto enc = source.encoding();
  metadata::MetadataSet set{metadata::parse(source.fetch_metadata(RoleKind::Root), enc),
                            metadata::parse(source.fetch_metadata(RoleKind::Targets), enc),
                            metadata::parse(source.fetch_metadata(RoleKind::Snapshot), enc),
                            metadata::parse(source.fetch_metadata(RoleKind::Timestamp), enc)};
  auto verified = metadata::verify_full_chain(trusted_root_, set, now, last_seen_);
  last_seen_ = verified.versions;
  if (set.root.version > trusted_root_.version) trusted_root_ = set.root;

  std::vector<VerifiedEnvelope> fresh;
  for (const auto& record : verified.targets.entries) {
    auto token_bytes = auth::encode_token(record.token);
    auto seen = seen_records_.find(record.name);
    if (seen != seen_records_.end() && seen->second == token_bytes) continue;

    Bytes bytes;
    try {
      bytes = source.fetch_envelope(record.name);
    } catch (const repo::RepoFailure& e) {
      fail(ControllerError::EnvelopeMissing, record.name + ": " + e.what());
    }
    auth::UpdateEnvelope env;
    try {
      env = auth::parse_envelope(bytes);
    } catch (const MalformedInput& e) {
      fail(ControllerError::EnvelopeMismatch, record.name + ": " + e.what());
    }
    if (auth::encode_token(env.token) != token_bytes || env.artifact.size() != record.size ||
        crypto::hash(env.artifact) != record.hash) {
      fail(ControllerError::EnvelopeMismatch, record.name + " disagrees with its targets record");
    }
    seen_records_[record.name] = token_bytes;
    VerifiedEnvelope v(record.name, std::move(env), std::move(bytes));
    pending_.insert_or_assign(record.name, v);
    fresh.push_back(std::move(v));
  }
  return fresh;
}

const VerifiedEnvelope& Controller::pending(const std::string& name) const {
  auto it = pending_.find(name);
  if (it == pending_.end()) fail(ControllerError::NotVerified, "no verified envelope " + name);
  return it->second;
}

PolicyDecision Controller::policy_gate(const VerifiedEnvelope& envelope, std::uint64_t now) const {
  if (policy_.window && (now < policy_.window->start || now > policy_.window->end)) {
    return {false, DeferReason::OutsideWindow};
  }
  auto model = envelope.envelope().token.constraints.device_model;
  if (model != 0 && !policy_.allowed_models.empty() && !policy_.allowed_models.contains(model)) {
    return {false, DeferReason::ModelBlocked};
  }
  return {true, DeferReason::OutsideWindow};
}

Session Controller::open_channel(std::uint64_t device_id, protocol::DeviceLink& link) {
  const auto& record = device(device_id);
  auto controller_nonce = rng_.bytes<crypto::kNonceSize>();
  ByteWriter hello;
  hello.u8(static_cast<std::uint8_t>(protocol::Request::Hello)).u64(device_id).raw(controller_nonce);
  auto reply_bytes = link.exchange(hello.bytes());
  if (!reply_bytes) fail(ControllerError::ChannelSetupFailed, "no reply to hello");
  auto reply = protocol::parse_reply(*reply_bytes);
  if (!reply.ok || reply.payload.size() != crypto::kNonceSize) {
    fail(ControllerError::ChannelSetupFailed, "hello refused: " + reply.error.message);
  }
  crypto::Nonce device_nonce{};
  std::copy(reply.payload.begin(), reply.payload.end(), device_nonce.begin());

  Session s;
  s.device_id_ = device_id;
  s.keys_ = crypto::derive_session_keys(record.k_att, controller_nonce, device_nonce);
  auto transcript = protocol::handshake_transcript(device_id, controller_nonce, device_nonce);
  Bytes mine{protocol::kControllerConfirm};
  mine.insert(mine.end(), transcript.bytes.begin(), transcript.bytes.end());
  ByteWriter confirm;
  confirm.u8(static_cast<std::uint8_t>(protocol::Request::Confirm));
  confirm.raw(crypto::seal(s.keys_, s.tx_++, mine).bytes);
  auto confirm_reply = link.exchange(confirm.bytes());
  if (!confirm_reply) fail(ControllerError::ChannelSetupFailed, "no reply to confirm");
  auto cr = protocol::parse_reply(*confirm_reply);
  if (!cr.ok) fail(ControllerError::ChannelSetupFailed, "confirm refused: " + cr.error.message);
  Bytes theirs;
  try {
    theirs = crypto::open(s.keys_, crypto::kResponderSequenceBit | s.rx_, {cr.payload});
  } catch (const crypto::ChannelFailure& e) {
    fail(ControllerError::ChannelSetupFailed, e.what());
  }
  ++s.rx_;
  Bytes expected{protocol::kDeviceConfirm};
  expected.insert(expected.end(), transcript.bytes.begin(), transcript.bytes.end());
  if (theirs != expected) fail(ControllerError::ChannelSetupFailed, "transcript mismatch");
  return s;
}

DeliveryResult Controller::deliver(Session& session, protocol::DeviceLink& link,
                                   const VerifiedEnvelope& envelope, std::size_t frame_payload) {
  auto it = pending_.find(envelope.name());
  if (it == pending_.end() || it->second.bytes() != envelope.bytes()) {
    fail(ControllerError::NotVerified, envelope.name() + " did not come from this controller's sync");
  }
  if (frame_payload == 0) throw std::invalid_argument("frame payload must be positive");
  DeliveryResult result;

  std::vector<crypto::ChannelFrame> frames;
  ByteView all(envelope.bytes());
  for (std::size_t off = 0; off < all.size(); off += frame_payload) {
    frames.push_back(
        crypto::seal(session.keys_, session.tx_++, all.subspan(off, std::min(frame_payload, all.size() - off))));
  }
  ByteWriter req;
  req.u8(static_cast<std::uint8_t>(protocol::Request::Update)).raw(protocol::encode_frames(frames));
  auto reply_bytes = link.exchange(req.bytes());
  if (!reply_bytes) {
    result.failure = "DeliveryFailed:NoAcknowledgment";
    return result;
  }
  auto reply = protocol::parse_reply(*reply_bytes);
  if (!reply.ok) {
    result.failure = "DeliveryFailed:" + reply.error.message;
    return result;
  }
  try {
    auto plain = crypto::open(session.keys_, crypto::kResponderSequenceBit | session.rx_,
                              {reply.payload});
    ++session.rx_;
    result.outcome = protocol::decode_install_outcome(plain);
  } catch (const std::exception&) {
    result.failure = "DeliveryFailed:BadAcknowledgment";
    return result;
  }
  result.delivered = true;
  if (result.outcome.kind == protocol::InstallOutcome::Kind::Installed) {
    auto& record = registry_.at(session.device_id());
    record.expected_version = result.outcome.version;
    record.expected_digest = envelope.envelope().token.artifact_hash;
  }
  return result;
}

AttestationResult Controller::request_attestation(std::uint64_t device_id,
                                                  protocol::DeviceLink& link) {
  return request_attestation(device_id, link, device(device_id).expected_digest);
}

AttestationResult Controller::request_attestation(std::uint64_t device_id,
                                                  protocol::DeviceLink& link,
                                                  const crypto::Digest& expected) {
  const auto& record = device(device_id);
  auto nonce = rng_.bytes<crypto::kNonceSize>();
  issued_nonces_.push_back(nonce);
  ByteWriter req;
  req.u8(static_cast<std::uint8_t>(protocol::Request::Attest)).raw(nonce);

  AttestationResult result;
  auto reply_bytes = link.exchange(req.bytes());
  if (!reply_bytes) return result;
  protocol::AttestationReport report;
  try {
    auto reply = protocol::parse_reply(*reply_bytes);
    if (!reply.ok) return result;
    report = protocol::decode_report(reply.payload);
  } catch (const MalformedInput&) {
    return result;
  }
  result.report = report;
  auto tag = crypto::mac(record.k_att,
                         protocol::report_mac_input(report.device_id, report.nonce, report.measurement));
  if (report.device_id != device_id || !crypto::tags_equal(tag, report.tag)) {
    result.failure = AttestationFailure::BadTag;
  } else if (report.nonce != nonce) {
    result.failure = AttestationFailure::WrongNonce;
  } else if (report.measurement != expected) {
    result.failure = AttestationFailure::WrongMeasurement;
  } else {
    result.verified = true;
  }
  return result;
}

void Controller::save(const std::filesystem::path& path) const {
  ByteWriter w;
  w.raw(kStateMagic).u8(kStateFormat);
  auto root = metadata::serialize(trusted_root_, metadata::Encoding::FixedBinary);
  w.u32(static_cast<std::uint32_t>(root.size())).raw(root);
  w.u64(last_seen_.root).u64(last_seen_.targets).u64(last_seen_.snapshot).u64(last_seen_.timestamp);
  w.u8(policy_.window ? 1 : 0);
  w.u64(policy_.window ? policy_.window->start : 0).u64(policy_.window ? policy_.window->end : 0);
  w.u16(static_cast<std::uint16_t>(policy_.allowed_models.size()));
  for (auto m : policy_.allowed_models) w.u64(m);
  w.u16(static_cast<std::uint16_t>(registry_.size()));
  for (const auto& [id, r] : registry_) {
    w.u64(r.device_id).u64(r.device_model).raw(r.k_att.bytes).u64(r.expected_version);
    w.raw(r.expected_digest.bytes);
  }
  w.u16(static_cast<std::uint16_t>(seen_records_.size()));
  for (const auto& [name, token] : seen_records_) {
    w.u8(static_cast<std::uint8_t>(name.size())).raw(as_bytes(name)).raw(token);
  }
  w.u16(static_cast<std::uint16_t>(pending_.size()));
  for (const auto& [name, v] : pending_) {
    w.u8(static_cast<std::uint8_t>(name.size())).raw(as_bytes(name));
    w.u32(static_cast<std::uint32_t>(v.bytes().size())).raw(v.bytes());
  }
  w.u32(static_cast<std::uint32_t>(issued_nonces_.size()));
  for (const auto& n : issued_nonces_) w.raw(n);
  w.u64(rng_seed_).u64(rng_epoch_ + 1);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
}

Controller Controller::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(data);
  auto magic = r.raw(kStateMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kStateMagic.begin()) || r.u8() != kStateFormat) {
    throw MalformedInput("not a controller state file", 0);
  }
  Controller c;
  c.trusted_root_ = metadata::parse(r.raw(r.u32()), metadata::Encoding::FixedBinary);
  c.last_seen_ = {r.u64(), r.u64(), r.u64(), r.u64()};
  bool has_window = r.u8() != 0;
  MaintenanceWindow window{r.u64(), r.u64()};
  if (has_window) c.policy_.window = window;
  for (auto n = r.u16(); n > 0; --n) c.policy_.allowed_models.insert(r.u64());
  for (auto n = r.u16(); n > 0; --n) {
    DeviceRecord d;
    d.device_id = r.u64();
    d.device_model = r.u64();
    d.k_att.bytes = r.fixed<crypto::kMacKeySize>();
    d.expected_version = r.u64();
    d.expected_digest.bytes = r.fixed<crypto::kDigestSize>();
    c.registry_[d.device_id] = d;
  }
  auto read_name = [&r] {
    auto v = r.raw(r.u8());
    return std::string(v.begin(), v.end());
  };
  for (auto n = r.u16(); n > 0; --n) {
    auto name = read_name();
    c.seen_records_[name] = r.fixed<auth::kTokenSize>();
  }
  for (auto n = r.u16(); n > 0; --n) {
    auto name = read_name();
    auto b = r.raw(r.u32());
    Bytes bytes(b.begin(), b.end());
    auto env = auth::parse_envelope(bytes);
    c.pending_.insert_or_assign(name, VerifiedEnvelope(name, std::move(env), std::move(bytes)));
  }
  for (auto n = r.u32(); n > 0; --n) c.issued_nonces_.push_back(r.fixed<crypto::kNonceSize>());
  c.rng_seed_ = r.u64();
  c.rng_epoch_ = r.u64();
  r.expect_end();
  ByteWriter seed;
  seed.u64(c.rng_seed_).u64(c.rng_epoch_).raw(as_bytes("controller"));
  c.rng_ = crypto::Drbg(seed.bytes());
  return c;
}

}  // namespace assured::controller
