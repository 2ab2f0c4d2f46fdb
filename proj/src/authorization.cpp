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

#include "assured/authorization.hpp"

#include <algorithm>
#include <stdexcept>

namespace assured::auth {

namespace {

void write_constraints(ByteWriter& w, const Constraints& c) {
  w.u64(c.device_model).u64(c.device_id).u64(c.required_prev_version).u64(c.new_version);
}

Constraints read_constraints(ByteReader& r) {
  Constraints c;
  c.device_model = r.u64();
  c.device_id = r.u64();
  c.required_prev_version = r.u64();
  c.new_version = r.u64();
  return c;
}

Bytes region_bytes(const crypto::Digest& hash, std::uint64_t size, const Constraints& c) {
  ByteWriter w;
  w.raw(hash.bytes).u64(size);
  write_constraints(w, c);
  return std::move(w).take();
}

}  // namespace

void validate(const Constraints& c) {
  if (c.new_version < 1) throw std::invalid_argument("new_version must be at least 1");
  if (c.required_prev_version != 0 && c.new_version <= c.required_prev_version) {
    throw std::invalid_argument("new_version must exceed required_prev_version");
  }
}

AuthorizationToken issue_token(const crypto::SigningKeyPair& oem_key, ByteView artifact,
                               const Constraints& constraints) {
  validate(constraints);
  AuthorizationToken token;
  token.artifact_hash = crypto::hash(artifact);
  token.artifact_size = artifact.size();
  token.constraints = constraints;
  token.signature = crypto::sign(oem_key, signed_region(token));
  return token;
}

Bytes signed_region(const AuthorizationToken& token) {
  return region_bytes(token.artifact_hash, token.artifact_size, token.constraints);
}

TokenBytes encode_token(const AuthorizationToken& token) {
  ByteWriter w;
  w.raw(signed_region(token)).raw(token.signature.bytes);
  TokenBytes out{};
  std::copy(w.bytes().begin(), w.bytes().end(), out.begin());
  return out;
}

AuthorizationToken decode_token(ByteView bytes) {
  if (bytes.size() != kTokenSize) {
    throw MalformedInput("token must be " + std::to_string(kTokenSize) + " bytes, got " +
                             std::to_string(bytes.size()),
                         0);
  }
  ByteReader r(bytes);
  AuthorizationToken token;
  token.artifact_hash.bytes = r.fixed<crypto::kDigestSize>();
  token.artifact_size = r.u64();
  token.constraints = read_constraints(r);
  token.signature.bytes = r.fixed<crypto::kSignatureSize>();
  return token;
}

std::string to_string(TokenVerdict v) {
  switch (v) {
    case TokenVerdict::Accept: return "Accept";
    case TokenVerdict::HashMismatch: return "HashMismatch";
    case TokenVerdict::SizeMismatch: return "SizeMismatch";
    case TokenVerdict::BadSignature: return "BadSignature";
  }
  return "?";
}

TokenVerdict verify_token(const crypto::PublicKey& oem_pub, ByteView artifact,
                          const AuthorizationToken& token) {
  if (artifact.size() != token.artifact_size) return TokenVerdict::SizeMismatch;
  if (crypto::hash(artifact) != token.artifact_hash) return TokenVerdict::HashMismatch;
  if (!crypto::verify(oem_pub, signed_region(token), token.signature)) {
    return TokenVerdict::BadSignature;
  }
  return TokenVerdict::Accept;
}

std::string to_string(ConstraintVerdict v) {
  switch (v) {
    case ConstraintVerdict::Accept: return "Accept";
    case ConstraintVerdict::WrongModel: return "WrongModel";
    case ConstraintVerdict::WrongDevice: return "WrongDevice";
    case ConstraintVerdict::VersionNotMonotonic: return "VersionNotMonotonic";
    case ConstraintVerdict::PatchOrderViolation: return "PatchOrderViolation";
  }
  return "?";
}

ConstraintVerdict evaluate_constraints(const Constraints& c, std::uint64_t device_model,
                                       std::uint64_t device_id, std::uint64_t installed_version) {
  if (c.device_model != 0 && c.device_model != device_model) return ConstraintVerdict::WrongModel;
  if (c.device_id != 0 && c.device_id != device_id) return ConstraintVerdict::WrongDevice;
  if (c.new_version <= installed_version) return ConstraintVerdict::VersionNotMonotonic;
  if (c.required_prev_version != 0 && c.required_prev_version != installed_version) {
    return ConstraintVerdict::PatchOrderViolation;
  }
  return ConstraintVerdict::Accept;
}

UpdateEnvelope build_envelope(const AuthorizationToken& token, Bytes artifact) {
  return UpdateEnvelope{token, std::move(artifact)};
}

Bytes serialize_envelope(const UpdateEnvelope& envelope) {
  ByteWriter w;
  w.raw(kEnvelopeMagic).raw(encode_token(envelope.token)).u64(envelope.artifact.size());
  w.raw(envelope.artifact);
  return std::move(w).take();
}

UpdateEnvelope parse_envelope(ByteView bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(kEnvelopeMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kEnvelopeMagic.begin())) {
    throw MalformedInput("bad envelope magic", 0);
  }
  UpdateEnvelope env;
  env.token = decode_token(r.raw(kTokenSize));
  std::uint64_t length = r.u64();
  if (length != r.remaining()) {
    throw MalformedInput("artifact length " + std::to_string(length) + " but " +
                             std::to_string(r.remaining()) + " bytes follow",
                         r.position());
  }
  auto artifact = r.raw(length);
  env.artifact.assign(artifact.begin(), artifact.end());
  return env;
}

}  // namespace assured::auth
