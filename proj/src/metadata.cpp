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

#include "assured/metadata.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <map>
#include <set>

#include <json.hpp>

namespace assured::metadata {

using nlohmann::json;

namespace {

std::atomic<std::uint64_t> g_json_parses{0};

std::string base64(ByteView data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                          static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes unbase64(const std::string& text) {
  if (text.size() % 4 != 0) throw ParseError("base64 length not a multiple of 4", 0);
  Bytes out(text.size() / 4 * 3);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                          static_cast<int>(text.size()));
  if (n < 0) throw ParseError("invalid base64", 0);
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  if (base64(out) != text) throw ParseError("non-canonical base64", 0);
  return out;
}

template <std::size_t N>
FixedBytes<N> fixed_from_base64(const json& j) {
  Bytes raw = unbase64(j.get<std::string>());
  if (raw.size() != N) {
    throw ParseError("expected " + std::to_string(N) + " bytes, got " + std::to_string(raw.size()),
                     0);
  }
  FixedBytes<N> out{};
  std::copy(raw.begin(), raw.end(), out.begin());
  return out;
}

void check_role_keys(const RoleKeys& rk, RoleKind role) {
  std::set<crypto::PublicKey> unique(rk.keys.begin(), rk.keys.end());
  if (unique.size() != rk.keys.size()) {
    throw std::invalid_argument(to_string(role) + " role lists a key twice");
  }
  if (rk.threshold < 1 || rk.threshold > rk.keys.size()) {
    throw std::invalid_argument(to_string(role) + " threshold must be in [1, key count]");
  }
}

void check_body(RoleBody& body) {
  if (auto* root = std::get_if<RootBody>(&body)) {
    for (auto role : kAllRoles) check_role_keys(root->for_role(role), role);
  } else if (auto* targets = std::get_if<TargetsBody>(&body)) {
    auto& e = targets->entries;
    std::sort(e.begin(), e.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (e[i].name.empty() || e[i].name.size() > kMaxTargetName ||
          e[i].name.find('\0') != std::string::npos) {
        throw std::invalid_argument("bad target name '" + e[i].name + "'");
      }
      if (i > 0 && e[i].name == e[i - 1].name) {
        throw std::invalid_argument("duplicate target name '" + e[i].name + "'");
      }
      if (e[i].hash != e[i].token.artifact_hash || e[i].size != e[i].token.artifact_size) {
        throw std::invalid_argument("target '" + e[i].name + "' disagrees with its token");
      }
    }
  }
}

// ---- FixedBinary ----

void write_role_keys(ByteWriter& w, const RoleKeys& rk) {
  w.u32(rk.threshold).u16(static_cast<std::uint16_t>(rk.keys.size()));
  for (const auto& k : rk.keys) w.raw(k.bytes);
}

RoleKeys read_role_keys(ByteReader& r) {
  RoleKeys rk;
  rk.threshold = r.u32();
  std::uint16_t n = r.u16();
  for (std::uint16_t i = 0; i < n; ++i) rk.keys.push_back({r.fixed<crypto::kPublicKeySize>()});
  return rk;
}

void write_body(ByteWriter& w, const RoleBody& body) {
  std::visit(
      [&w](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, RootBody>) {
          for (auto role : kAllRoles) write_role_keys(w, b.for_role(role));
        } else if constexpr (std::is_same_v<T, TargetsBody>) {
          w.u16(static_cast<std::uint16_t>(b.entries.size()));
          for (const auto& e : b.entries) {
            w.padded(as_bytes(e.name), kMaxTargetName).raw(e.hash.bytes).u64(e.size);
            w.raw(auth::encode_token(e.token));
          }
        } else if constexpr (std::is_same_v<T, SnapshotBody>) {
          w.u64(b.root_version).u64(b.targets_version);
        } else {
          w.u64(b.snapshot_version).raw(b.snapshot_hash.bytes);
        }
      },
      body);
}

RoleBody read_body(ByteReader& r, RoleKind role) {
  switch (role) {
    case RoleKind::Root: {
      RootBody b;
      b.root = read_role_keys(r);
      b.targets = read_role_keys(r);
      b.snapshot = read_role_keys(r);
      b.timestamp = read_role_keys(r);
      return b;
    }
    case RoleKind::Targets: {
      TargetsBody b;
      std::uint16_t n = r.u16();
      for (std::uint16_t i = 0; i < n; ++i) {
        TargetRecord e;
        auto name = r.raw(kMaxTargetName);
        auto end = std::find(name.begin(), name.end(), 0);
        e.name.assign(name.begin(), end);
        if (std::any_of(end, name.end(), [](auto c) { return c != 0; })) {
          throw MalformedInput("non-zero padding in target name", r.position());
        }
        e.hash.bytes = r.fixed<crypto::kDigestSize>();
        e.size = r.u64();
        e.token = auth::decode_token(r.raw(auth::kTokenSize));
        b.entries.push_back(std::move(e));
      }
      return b;
    }
    case RoleKind::Snapshot: {
      SnapshotBody b;
      b.root_version = r.u64();
      b.targets_version = r.u64();
      return b;
    }
    case RoleKind::Timestamp: {
      TimestampBody b;
      b.snapshot_version = r.u64();
      b.snapshot_hash.bytes = r.fixed<crypto::kDigestSize>();
      return b;
    }
  }
  throw MalformedInput("unknown role tag", 0);
}

Bytes serialize_binary(const RoleMetadata& meta) {
  ByteWriter w;
  w.raw(signed_bytes(meta)).u16(static_cast<std::uint16_t>(meta.signatures.size()));
  for (const auto& s : meta.signatures) w.raw(s.key_id.bytes).raw(s.signature.bytes);
  return std::move(w).take();
}

RoleMetadata parse_binary(ByteView bytes) {
  ByteReader r(bytes);
  try {
    RoleMetadata meta;
    std::uint8_t tag = r.u8();
    if (tag < 1 || tag > 4) throw ParseError("unknown role tag " + std::to_string(tag), 0);
    meta.version = r.u64();
    meta.expires = r.u64();
    meta.body = read_body(r, static_cast<RoleKind>(tag));
    std::uint16_t n = r.u16();
    for (std::uint16_t i = 0; i < n; ++i) {
      KeySignature s;
      s.key_id.bytes = r.fixed<crypto::kDigestSize>();
      s.signature.bytes = r.fixed<crypto::kSignatureSize>();
      meta.signatures.push_back(s);
    }
    r.expect_end();
    return meta;
  } catch (const MalformedInput& e) {
    throw ParseError(e.what(), r.position());
  }
}

// ---- Json ----

json role_keys_json(const RoleKeys& rk) {
  json keys = json::array();
  for (const auto& k : rk.keys) keys.push_back(base64(k.bytes));
  return {{"keys", keys}, {"threshold", rk.threshold}};
}

RoleKeys role_keys_from_json(const json& j) {
  RoleKeys rk;
  for (const auto& k : j.at("keys")) {
    rk.keys.push_back({fixed_from_base64<crypto::kPublicKeySize>(k)});
  }
  rk.threshold = j.at("threshold").get<std::uint32_t>();
  return rk;
}

json body_json(const RoleBody& body) {
  return std::visit(
      [](const auto& b) -> json {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, RootBody>) {
          json roles = json::object();
          for (auto role : kAllRoles) roles[to_string(role)] = role_keys_json(b.for_role(role));
          return {{"roles", roles}};
        } else if constexpr (std::is_same_v<T, TargetsBody>) {
          json targets = json::object();
          for (const auto& e : b.entries) {
            targets[e.name] = {{"hashes", {{"sha256", base64(e.hash.bytes)}}},
                               {"length", e.size},
                               {"token", base64(auth::encode_token(e.token))}};
          }
          return {{"targets", targets}};
        } else if constexpr (std::is_same_v<T, SnapshotBody>) {
          return {{"meta",
                   {{"root", {{"version", b.root_version}}},
                    {"targets", {{"version", b.targets_version}}}}}};
        } else {
          return {{"meta",
                   {{"snapshot",
                     {{"hashes", {{"sha256", base64(b.snapshot_hash.bytes)}}},
                      {"version", b.snapshot_version}}}}}};
        }
      },
      body);
}

RoleBody body_from_json(const json& signed_part, RoleKind role) {
  switch (role) {
    case RoleKind::Root: {
      const auto& roles = signed_part.at("roles");
      if (roles.size() != kAllRoles.size()) throw ParseError("root must list four roles", 0);
      RootBody b;
      b.root = role_keys_from_json(roles.at("root"));
      b.targets = role_keys_from_json(roles.at("targets"));
      b.snapshot = role_keys_from_json(roles.at("snapshot"));
      b.timestamp = role_keys_from_json(roles.at("timestamp"));
      return b;
    }
    case RoleKind::Targets: {
      TargetsBody b;
      for (const auto& [name, rec] : signed_part.at("targets").items()) {
        TargetRecord e;
        e.name = name;
        e.hash.bytes = fixed_from_base64<crypto::kDigestSize>(rec.at("hashes").at("sha256"));
        e.size = rec.at("length").get<std::uint64_t>();
        auto token = unbase64(rec.at("token").get<std::string>());
        e.token = auth::decode_token(token);
        b.entries.push_back(std::move(e));
      }
      return b;
    }
    case RoleKind::Snapshot: {
      const auto& meta = signed_part.at("meta");
      SnapshotBody b;
      b.root_version = meta.at("root").at("version").get<std::uint64_t>();
      b.targets_version = meta.at("targets").at("version").get<std::uint64_t>();
      return b;
    }
    case RoleKind::Timestamp: {
      const auto& snap = signed_part.at("meta").at("snapshot");
      TimestampBody b;
      b.snapshot_version = snap.at("version").get<std::uint64_t>();
      b.snapshot_hash.bytes = fixed_from_base64<crypto::kDigestSize>(snap.at("hashes").at("sha256"));
      return b;
    }
  }
  throw ParseError("unknown role", 0);
}

Bytes serialize_json(const RoleMetadata& meta) {
  json signed_part = body_json(meta.body);
  signed_part["_type"] = to_string(meta.role());
  signed_part["version"] = meta.version;
  signed_part["expires"] = meta.expires;
  json sigs = json::array();
  for (const auto& s : meta.signatures) {
    sigs.push_back({{"keyid", base64(s.key_id.bytes)}, {"sig", base64(s.signature.bytes)}});
  }
  json doc = {{"signatures", sigs}, {"signed", signed_part}};
  std::string text = doc.dump();
  return Bytes(text.begin(), text.end());
}

RoleMetadata parse_json(ByteView bytes) {
  g_json_parses.fetch_add(1, std::memory_order_relaxed);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), e.byte);
  }
  try {
    const auto& signed_part = doc.at("signed");
    RoleMetadata meta;
    RoleKind role = role_from_string(signed_part.at("_type").get<std::string>());
    meta.version = signed_part.at("version").get<std::uint64_t>();
    meta.expires = signed_part.at("expires").get<std::uint64_t>();
    meta.body = body_from_json(signed_part, role);
    for (const auto& s : doc.at("signatures")) {
      meta.signatures.push_back({{fixed_from_base64<crypto::kDigestSize>(s.at("keyid"))},
                                 {fixed_from_base64<crypto::kSignatureSize>(s.at("sig"))}});
    }
    // Canonical form only: anything that does not re-serialize to the same
    // bytes is rejected.
    Bytes again = serialize_json(meta);
    if (!std::equal(again.begin(), again.end(), bytes.begin(), bytes.end())) {
      auto mismatch = std::mismatch(again.begin(), again.end(), bytes.begin(), bytes.end());
      throw ParseError("metadata is not in canonical form",
                       static_cast<std::size_t>(mismatch.second - bytes.begin()));
    }
    return meta;
  } catch (const json::exception& e) {
    throw ParseError(e.what(), 0);
  } catch (const MalformedInput& e) {
    throw ParseError(e.what(), e.position());
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), 0);
  }
}

// ---- chain verification ----

[[noreturn]] void fail(ChainError code, RoleKind role, const std::string& detail) {
  throw ChainFailure(code, role, to_string(role) + ": " + to_string(code) + ": " + detail);
}

void require_role(const RoleMetadata& meta, RoleKind expected) {
  if (meta.role() != expected) {
    fail(ChainError::BindingMismatch, expected, "presented metadata is " + to_string(meta.role()));
  }
}

void require_threshold(const RoleMetadata& meta, const RoleKeys& authorized, RoleKind role) {
  std::map<crypto::Digest, const crypto::PublicKey*> by_id;
  for (const auto& k : authorized.keys) by_id.emplace(crypto::key_id(k), &k);
  Bytes message = signed_bytes(meta);
  std::set<crypto::Digest> counted;
  for (const auto& s : meta.signatures) {
    if (counted.size() >= authorized.threshold) break;
    auto it = by_id.find(s.key_id);
    if (it == by_id.end() || counted.contains(s.key_id)) continue;
    if (crypto::verify(*it->second, message, s.signature)) counted.insert(s.key_id);
  }
  if (counted.size() < authorized.threshold) {
    fail(ChainError::ThresholdNotMet, role,
         std::to_string(counted.size()) + " of " + std::to_string(authorized.threshold) +
             " required signatures");
  }
}

void require_fresh(const RoleMetadata& meta, RoleKind role, std::uint64_t now,
                   std::uint64_t last_seen) {
  if (meta.version < last_seen) {
    fail(ChainError::VersionRollback, role,
         "version " + std::to_string(meta.version) + " below last seen " +
             std::to_string(last_seen));
  }
  if (meta.expires <= now) {
    fail(ChainError::Expired, role,
         "expired at " + std::to_string(meta.expires) + ", now " + std::to_string(now));
  }
}

}  // namespace

std::string to_string(RoleKind role) {
  switch (role) {
    case RoleKind::Root: return "root";
    case RoleKind::Targets: return "targets";
    case RoleKind::Snapshot: return "snapshot";
    case RoleKind::Timestamp: return "timestamp";
  }
  return "?";
}

RoleKind role_from_string(std::string_view name) {
  for (auto role : kAllRoles) {
    if (to_string(role) == name) return role;
  }
  throw std::invalid_argument("unknown role '" + std::string(name) + "'");
}

const RoleKeys& RootBody::for_role(RoleKind role) const {
  switch (role) {
    case RoleKind::Root: return root;
    case RoleKind::Targets: return targets;
    case RoleKind::Snapshot: return snapshot;
    case RoleKind::Timestamp: return timestamp;
  }
  throw std::invalid_argument("unknown role");
}

const TargetRecord* TargetsBody::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

RoleKind RoleMetadata::role() const {
  return static_cast<RoleKind>(body.index() + 1);
}

RoleMetadata build_and_sign(RoleBody body, std::uint64_t version, std::uint64_t expires,
                            std::span<const crypto::SigningKeyPair> keys) {
  if (keys.empty()) throw std::invalid_argument("at least one signing key is required");
  if (version < 1) throw std::invalid_argument("metadata version must be at least 1");
  check_body(body);
  RoleMetadata meta{version, expires, std::move(body), {}};
  Bytes message = signed_bytes(meta);
  std::set<crypto::Digest> ids;
  for (const auto& k : keys) {
    auto id = crypto::key_id(k.public_key());
    if (!ids.insert(id).second) throw std::invalid_argument("signing key listed twice");
    meta.signatures.push_back({id, crypto::sign(k, message)});
  }
  return meta;
}

std::string to_string(Encoding e) { return e == Encoding::Json ? "json" : "binary"; }

Bytes signed_bytes(const RoleMetadata& meta) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(meta.role())).u64(meta.version).u64(meta.expires);
  write_body(w, meta.body);
  return std::move(w).take();
}

Bytes serialize(const RoleMetadata& meta, Encoding encoding) {
  return encoding == Encoding::Json ? serialize_json(meta) : serialize_binary(meta);
}

RoleMetadata parse(ByteView bytes, Encoding encoding) {
  return encoding == Encoding::Json ? parse_json(bytes) : parse_binary(bytes);
}

std::uint64_t json_parse_count() noexcept { return g_json_parses.load(std::memory_order_relaxed); }

crypto::Digest snapshot_digest(const RoleMetadata& snapshot) {
  return crypto::hash(serialize_binary(snapshot));
}

const RoleMetadata& MetadataSet::get(RoleKind role) const {
  switch (role) {
    case RoleKind::Root: return root;
    case RoleKind::Targets: return targets;
    case RoleKind::Snapshot: return snapshot;
    case RoleKind::Timestamp: return timestamp;
  }
  throw std::invalid_argument("unknown role");
}

std::uint64_t LastSeen::get(RoleKind role) const {
  switch (role) {
    case RoleKind::Root: return root;
    case RoleKind::Targets: return targets;
    case RoleKind::Snapshot: return snapshot;
    case RoleKind::Timestamp: return timestamp;
  }
  return 0;
}

std::string to_string(ChainError e) {
  switch (e) {
    case ChainError::ThresholdNotMet: return "ThresholdNotMet";
    case ChainError::Expired: return "Expired";
    case ChainError::VersionRollback: return "VersionRollback";
    case ChainError::BindingMismatch: return "BindingMismatch";
  }
  return "?";
}

VerifiedTargets verify_full_chain(const RoleMetadata& trusted_root, const MetadataSet& set,
                                  std::uint64_t now, const LastSeen& last_seen) {
  require_role(trusted_root, RoleKind::Root);
  require_role(set.root, RoleKind::Root);
  require_role(set.targets, RoleKind::Targets);
  require_role(set.snapshot, RoleKind::Snapshot);
  require_role(set.timestamp, RoleKind::Timestamp);

  // Root: signed by the anchor's root keys; a newer root must also satisfy
  // its own root keys.
  const auto& anchor = trusted_root.as<RootBody>();
  require_fresh(set.root, RoleKind::Root, now, std::max(last_seen.root, trusted_root.version));
  require_threshold(set.root, anchor.root, RoleKind::Root);
  const auto& root = set.root.as<RootBody>();
  if (set.root.version > trusted_root.version) {
    require_threshold(set.root, root.root, RoleKind::Root);
  }

  require_fresh(set.timestamp, RoleKind::Timestamp, now, last_seen.timestamp);
  require_threshold(set.timestamp, root.timestamp, RoleKind::Timestamp);
  const auto& ts = set.timestamp.as<TimestampBody>();
  if (ts.snapshot_version != set.snapshot.version ||
      ts.snapshot_hash != snapshot_digest(set.snapshot)) {
    fail(ChainError::BindingMismatch, RoleKind::Snapshot,
         "timestamp names snapshot version " + std::to_string(ts.snapshot_version) +
             ", presented " + std::to_string(set.snapshot.version));
  }

  require_fresh(set.snapshot, RoleKind::Snapshot, now, last_seen.snapshot);
  require_threshold(set.snapshot, root.snapshot, RoleKind::Snapshot);
  const auto& snap = set.snapshot.as<SnapshotBody>();
  if (snap.root_version != set.root.version) {
    fail(ChainError::BindingMismatch, RoleKind::Root,
         "snapshot names root version " + std::to_string(snap.root_version) + ", presented " +
             std::to_string(set.root.version));
  }
  if (snap.targets_version != set.targets.version) {
    fail(ChainError::BindingMismatch, RoleKind::Targets,
         "snapshot names targets version " + std::to_string(snap.targets_version) +
             ", presented " + std::to_string(set.targets.version));
  }

  require_fresh(set.targets, RoleKind::Targets, now, last_seen.targets);
  require_threshold(set.targets, root.targets, RoleKind::Targets);
  const auto& targets = set.targets.as<TargetsBody>();
  for (const auto& e : targets.entries) {
    if (e.hash != e.token.artifact_hash || e.size != e.token.artifact_size) {
      fail(ChainError::BindingMismatch, RoleKind::Targets,
           "record '" + e.name + "' disagrees with its token");
    }
  }

  return VerifiedTargets{targets,
                         {set.root.version, set.targets.version, set.snapshot.version,
                          set.timestamp.version}};
}

}  // namespace assured::metadata
