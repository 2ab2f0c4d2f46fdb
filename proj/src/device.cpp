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

#include "assured/device.hpp"

#include <fstream>

namespace assured::device {

using protocol::InstallOutcome;
using protocol::InstallReason;

namespace {

// Raised by checkpoint() to model power loss mid-install.
struct PowerLoss {};

constexpr std::array<std::uint8_t, 4> kFlashMagic = {'A', 'D', 'E', 'V'};
constexpr std::uint8_t kFlashFormat = 1;

BankId other(BankId b) { return b == BankId::A ? BankId::B : BankId::A; }

InstallReason reason_of(auth::TokenVerdict v) {
  switch (v) {
    case auth::TokenVerdict::HashMismatch: return InstallReason::HashMismatch;
    case auth::TokenVerdict::SizeMismatch: return InstallReason::SizeMismatch;
    case auth::TokenVerdict::BadSignature: return InstallReason::BadSignature;
    case auth::TokenVerdict::Accept: break;
  }
  return InstallReason::None;
}

InstallReason reason_of(auth::ConstraintVerdict v) {
  switch (v) {
    case auth::ConstraintVerdict::WrongModel: return InstallReason::WrongModel;
    case auth::ConstraintVerdict::WrongDevice: return InstallReason::WrongDevice;
    case auth::ConstraintVerdict::VersionNotMonotonic: return InstallReason::VersionNotMonotonic;
    case auth::ConstraintVerdict::PatchOrderViolation: return InstallReason::PatchOrderViolation;
    case auth::ConstraintVerdict::Accept: break;
  }
  return InstallReason::None;
}

Bytes read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

std::string to_string(InstallMode m) { return m == InstallMode::DualBank ? "dual" : "single"; }

Device Device::manufacture(const Provisioning& p, const auth::UpdateEnvelope& factory_image) {
  Device d;
  d.identity_ = p.identity;
  d.mode_ = p.mode;
  d.secure_ = {p.oem_public, p.k_att, p.tuf_anchor, {}};
  d.rng_seed_ = p.rng_seed;
  d.rng_ = crypto::Drbg::from_seed(p.rng_seed, "device");
  if (auth::verify_token(p.oem_public, factory_image.artifact, factory_image.token) !=
      auth::TokenVerdict::Accept) {
    throw std::invalid_argument("factory image does not verify under the OEM key");
  }
  auto& bank = d.banks_[0];
  bank.valid = true;
  bank.version = factory_image.token.constraints.new_version;
  bank.token = auth::encode_token(factory_image.token);
  bank.artifact = factory_image.artifact;
  d.active_ = BankId::A;
  d.installed_version_ = bank.version;
  return d;
}

crypto::Nonce Device::channel_accept(std::uint64_t device_id,
                                     const crypto::Nonce& controller_nonce) {
  session_.reset();
  if (device_id != identity_.id) {
    throw SessionFailure(SessionError::WrongDevice,
                         "handshake addressed to device " + std::to_string(device_id));
  }
  auto device_nonce = rng_.bytes<crypto::kNonceSize>();
  Session s;
  s.keys = crypto::derive_session_keys(secure_.k_att, controller_nonce, device_nonce);
  s.transcript = protocol::handshake_transcript(device_id, controller_nonce, device_nonce);
  session_ = s;
  return device_nonce;
}

crypto::ChannelFrame Device::confirm_channel(const crypto::ChannelFrame& controller_confirm) {
  if (!session_ || session_->confirmed) {
    throw SessionFailure(SessionError::NotConfirmed, "no handshake in progress");
  }
  Bytes payload;
  try {
    payload = crypto::open(session_->keys, 0, controller_confirm);
  } catch (const crypto::ChannelFailure&) {
    session_.reset();
    throw;
  }
  Bytes expected{protocol::kControllerConfirm};
  expected.insert(expected.end(), session_->transcript.bytes.begin(),
                  session_->transcript.bytes.end());
  if (payload != expected) {
    session_.reset();
    throw crypto::ChannelFailure(crypto::ChannelError::AuthFailure, "transcript mismatch");
  }
  session_->confirmed = true;
  session_->rx = 1;
  Bytes reply{protocol::kDeviceConfirm};
  reply.insert(reply.end(), session_->transcript.bytes.begin(), session_->transcript.bytes.end());
  auto frame = crypto::seal(session_->keys, crypto::kResponderSequenceBit | session_->tx, reply);
  ++session_->tx;
  return frame;
}

InstallOutcome Device::rejected(InstallReason reason) const {
  InstallOutcome o;
  o.kind = InstallOutcome::Kind::Rejected;
  o.reason = reason;
  o.version = installed_version_;
  o.replacement_required = replacement_required_;
  return o;
}

Device::Delivery Device::receive_update(std::span<const crypto::ChannelFrame> frames) {
  crypto::VerificationScope scope;
  if (!has_session()) return {rejected(InstallReason::NoSession), std::nullopt, std::nullopt};

  Bytes envelope_bytes;
  try {
    for (const auto& f : frames) {
      auto chunk = crypto::open(session_->keys, session_->rx, f);
      ++session_->rx;
      envelope_bytes.insert(envelope_bytes.end(), chunk.begin(), chunk.end());
    }
  } catch (const crypto::ChannelFailure& e) {
    session_.reset();
    return {rejected(InstallReason::ChannelFailure), std::nullopt, e.code()};
  }

  InstallOutcome outcome;
  try {
    auto env = auth::parse_envelope(envelope_bytes);
    outcome = install(env.token, env.artifact, false);
  } catch (const MalformedInput&) {
    outcome = rejected(InstallReason::MalformedEnvelope);
  } catch (const PowerLoss&) {
    session_.reset();
    outcome = rejected(InstallReason::PowerLoss);
    outcome.pk_verifications = static_cast<std::uint32_t>(scope.delta());
    return {outcome, std::nullopt, std::nullopt};
  }
  outcome.pk_verifications = static_cast<std::uint32_t>(scope.delta());
  auto ack = crypto::seal(session_->keys, crypto::kResponderSequenceBit | session_->tx,
                          protocol::encode(outcome));
  ++session_->tx;
  return {outcome, ack, std::nullopt};
}

InstallOutcome Device::receive_plaintext(ByteView) {
  return rejected(InstallReason::NoImplicitAuth);
}

InstallOutcome Device::receive_tuf_update(const std::array<Bytes, 4>& blobs,
                                          metadata::Encoding encoding, ByteView envelope,
                                          std::uint64_t now) {
  crypto::VerificationScope scope;
  auto finish = [&](InstallOutcome o) {
    o.pk_verifications = static_cast<std::uint32_t>(scope.delta());
    return o;
  };
  if (!secure_.tuf_anchor) return finish(rejected(InstallReason::MetadataRejected));
  metadata::VerifiedTargets verified;
  try {
    metadata::MetadataSet set{metadata::parse(blobs[0], encoding),
                              metadata::parse(blobs[1], encoding),
                              metadata::parse(blobs[2], encoding),
                              metadata::parse(blobs[3], encoding)};
    verified = metadata::verify_full_chain(*secure_.tuf_anchor, set, now, secure_.tuf_seen);
  } catch (const metadata::ParseError&) {
    return finish(rejected(InstallReason::MetadataRejected));
  } catch (const metadata::ChainFailure&) {
    return finish(rejected(InstallReason::MetadataRejected));
  }

  auth::UpdateEnvelope env;
  try {
    env = auth::parse_envelope(envelope);
  } catch (const MalformedInput&) {
    return finish(rejected(InstallReason::MalformedEnvelope));
  }
  auto digest = crypto::hash(env.artifact);
  const metadata::TargetRecord* record = nullptr;
  for (const auto& e : verified.targets.entries) {
    if (e.hash == digest && e.size == env.artifact.size()) record = &e;
  }
  if (record == nullptr) return finish(rejected(InstallReason::UnknownTarget));
  try {
    auto outcome = install(record->token, env.artifact, true);
    if (outcome.kind == InstallOutcome::Kind::Installed) secure_.tuf_seen = verified.versions;
    return finish(outcome);
  } catch (const PowerLoss&) {
    return finish(rejected(InstallReason::PowerLoss));
  }
}

InstallOutcome Device::install(const auth::AuthorizationToken& token, const Bytes& artifact,
                               bool token_verified) {
  if (mode_ == InstallMode::SingleBank) {
    auto c = auth::evaluate_constraints(token.constraints, identity_.model, identity_.id,
                                        installed_version_);
    if (c != auth::ConstraintVerdict::Accept) return rejected(reason_of(c));
    return install_single(token, artifact);
  }
  if (!token_verified) {
    auto v = auth::verify_token(secure_.oem_public, artifact, token);
    if (v != auth::TokenVerdict::Accept) return rejected(reason_of(v));
  }
  auto c = auth::evaluate_constraints(token.constraints, identity_.model, identity_.id,
                                      installed_version_);
  if (c != auth::ConstraintVerdict::Accept) return rejected(reason_of(c));
  return install_dual(token, artifact);
}

void Device::checkpoint(int step) {
  if (faults_.power_loss_after_step && *faults_.power_loss_after_step == step) {
    faults_.power_loss_after_step.reset();
    throw PowerLoss{};
  }
}

InstallOutcome Device::install_dual(const auth::AuthorizationToken& token, const Bytes& artifact) {
  auto target = other(active_);
  auto& bank = banks_[static_cast<std::size_t>(target)];
  bank = Bank{};
  checkpoint(1);
  bank.artifact = artifact;
  if (faults_.corrupt_next_write && !bank.artifact.empty()) {
    bank.artifact[bank.artifact.size() / 2] ^= 0x01;
    faults_.corrupt_next_write = false;
  }
  checkpoint(2);
  bank.token = auth::encode_token(token);
  checkpoint(3);
  bank.version = token.constraints.new_version;
  bank.valid = true;
  checkpoint(4);

  // Read back what landed in flash. The signature was already checked on
  // these token bytes, so equality plus the artifact digest is enough.
  if (bank.token != auth::encode_token(token) || bank.artifact.size() != token.artifact_size ||
      crypto::hash(bank.artifact) != token.artifact_hash) {
    bank = Bank{};
    InstallOutcome o = rejected(InstallReason::BankVerifyFailed);
    o.kind = InstallOutcome::Kind::RolledBack;
    return o;
  }
  active_ = target;
  checkpoint(5);
  installed_version_ = bank.version;
  checkpoint(6);

  InstallOutcome o;
  o.kind = InstallOutcome::Kind::Installed;
  o.version = installed_version_;
  return o;
}

InstallOutcome Device::install_single(const auth::AuthorizationToken& token,
                                      const Bytes& artifact) {
  auto& bank = banks_[static_cast<std::size_t>(active_)];
  bank = Bank{};
  replacement_required_ = true;
  checkpoint(1);
  bank.artifact = artifact;
  if (faults_.corrupt_next_write && !bank.artifact.empty()) {
    bank.artifact[bank.artifact.size() / 2] ^= 0x01;
    faults_.corrupt_next_write = false;
  }
  checkpoint(2);
  bank.token = auth::encode_token(token);
  checkpoint(3);
  bank.version = token.constraints.new_version;
  bank.valid = true;
  checkpoint(4);

  // Only now, with the old image gone, is the new one validated.
  auto v = auth::verify_token(secure_.oem_public, bank.artifact, auth::decode_token(bank.token));
  if (v != auth::TokenVerdict::Accept) {
    bank.valid = false;
    auto o = rejected(reason_of(v));
    o.replacement_required = true;
    o.version = 0;
    return o;
  }
  replacement_required_ = false;
  installed_version_ = bank.version;
  checkpoint(5);

  InstallOutcome o;
  o.kind = InstallOutcome::Kind::Installed;
  o.version = installed_version_;
  return o;
}

bool Device::bank_bootable(const Bank& bank) const {
  if (!bank.valid) return false;
  auto token = auth::decode_token(bank.token);
  if (token.constraints.new_version != bank.version) return false;
  if (auth::verify_token(secure_.oem_public, bank.artifact, token) != auth::TokenVerdict::Accept) {
    return false;
  }
  const auto& c = token.constraints;
  return (c.device_model == 0 || c.device_model == identity_.model) &&
         (c.device_id == 0 || c.device_id == identity_.id);
}

protocol::BootResult Device::boot() {
  session_.reset();
  faults_.power_loss_after_step.reset();
  protocol::BootResult r;
  if (mode_ == InstallMode::SingleBank) {
    if (!replacement_required_ && bank_bootable(banks_[static_cast<std::size_t>(active_)])) {
      r.running = true;
      r.version = installed_version_ = banks_[static_cast<std::size_t>(active_)].version;
    } else {
      replacement_required_ = true;
      r.reason = protocol::BootResult::Reason::NeedsReplacement;
    }
    return r;
  }
  for (auto candidate : {active_, other(active_)}) {
    const auto& bank = banks_[static_cast<std::size_t>(candidate)];
    if (bank_bootable(bank)) {
      r.fell_back = candidate != active_;
      active_ = candidate;
      installed_version_ = bank.version;
      r.running = true;
      r.version = bank.version;
      return r;
    }
  }
  r.reason = protocol::BootResult::Reason::NoValidImage;
  return r;
}

protocol::AttestationReport Device::attest(const crypto::Nonce& nonce) {
  if (!served_nonces_.insert(nonce).second) {
    throw AttestFailure(protocol::AttestError::RefusedReplay, "nonce already served");
  }
  protocol::AttestationReport r;
  r.device_id = identity_.id;
  r.nonce = nonce;
  r.measurement = crypto::hash(banks_[static_cast<std::size_t>(active_)].artifact);
  r.tag = crypto::mac(secure_.k_att, protocol::report_mac_input(r.device_id, nonce, r.measurement));
  return r;
}

void Device::save_flash(const std::filesystem::path& path) const {
  ByteWriter w;
  w.raw(kFlashMagic).u8(kFlashFormat).u8(static_cast<std::uint8_t>(mode_));
  w.u64(identity_.model).u64(identity_.id).u8(static_cast<std::uint8_t>(active_));
  w.u64(installed_version_).u8(replacement_required_ ? 1 : 0);
  w.u64(rng_seed_).u64(rng_epoch_ + 1);
  for (const auto& bank : banks_) {
    w.u8(bank.valid ? 1 : 0).u64(bank.version).raw(bank.token).u64(bank.artifact.size());
    w.raw(bank.artifact);
  }
  w.raw(secure_.oem_public.bytes).raw(secure_.k_att.bytes);
  if (secure_.tuf_anchor) {
    auto anchor = metadata::serialize(*secure_.tuf_anchor, metadata::Encoding::FixedBinary);
    w.u8(1).u32(static_cast<std::uint32_t>(anchor.size())).raw(anchor);
  } else {
    w.u8(0);
  }
  w.u64(secure_.tuf_seen.root).u64(secure_.tuf_seen.targets);
  w.u64(secure_.tuf_seen.snapshot).u64(secure_.tuf_seen.timestamp);
  w.u32(static_cast<std::uint32_t>(served_nonces_.size()));
  for (const auto& n : served_nonces_) w.raw(n);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
}

Device Device::load_flash(const std::filesystem::path& path) {
  Bytes image = read_file(path);
  ByteReader r(image);
  auto magic = r.raw(kFlashMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kFlashMagic.begin()) || r.u8() != kFlashFormat) {
    throw MalformedInput("not a device flash image", 0);
  }
  Device d;
  d.mode_ = static_cast<InstallMode>(r.u8());
  d.identity_.model = r.u64();
  d.identity_.id = r.u64();
  d.active_ = static_cast<BankId>(r.u8() & 1);
  d.installed_version_ = r.u64();
  d.replacement_required_ = r.u8() != 0;
  d.rng_seed_ = r.u64();
  d.rng_epoch_ = r.u64();
  for (auto& bank : d.banks_) {
    bank.valid = r.u8() != 0;
    bank.version = r.u64();
    bank.token = r.fixed<auth::kTokenSize>();
    auto n = r.u64();
    auto a = r.raw(n);
    bank.artifact.assign(a.begin(), a.end());
  }
  d.secure_.oem_public.bytes = r.fixed<crypto::kPublicKeySize>();
  d.secure_.k_att.bytes = r.fixed<crypto::kMacKeySize>();
  if (r.u8() != 0) {
    auto n = r.u32();
    d.secure_.tuf_anchor = metadata::parse(r.raw(n), metadata::Encoding::FixedBinary);
  }
  d.secure_.tuf_seen = {r.u64(), r.u64(), r.u64(), r.u64()};
  auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) d.served_nonces_.insert(r.fixed<crypto::kNonceSize>());
  r.expect_end();
  ByteWriter seed;
  seed.u64(d.rng_seed_).u64(d.rng_epoch_).raw(as_bytes("device"));
  d.rng_ = crypto::Drbg(seed.bytes());
  return d;
}

void FaultInjector::power_loss_after(Device& d, std::optional<int> step) {
  d.faults_.power_loss_after_step = step;
}

void FaultInjector::corrupt_next_write(Device& d) { d.faults_.corrupt_next_write = true; }

void FaultInjector::flip_bank_bit(Device& d, BankId bank, std::size_t bit) {
  auto& b = d.banks_[static_cast<std::size_t>(bank)];
  if (b.artifact.empty()) return;
  bit %= b.artifact.size() * 8;
  b.artifact[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
}

}  // namespace assured::device
