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

#include "assured/repository.hpp"

#include <fstream>

#include <json.hpp>

namespace assured::repo {

using metadata::Encoding;
using metadata::MetadataSet;
using metadata::RoleKind;

namespace {

[[noreturn]] void reject(const std::string& why) {
  throw RepoFailure(RepoError::PublishRejected, "publish rejected: " + why);
}

void sign_snapshot_and_timestamp(RepositoryState& s) {
  auto& cur = s.current;
  cur.snapshot = metadata::build_and_sign(
      metadata::SnapshotBody{cur.root.version, cur.targets.version}, cur.snapshot.version + 1,
      s.clock + s.expiry.snapshot, s.keys.snapshot);
  cur.timestamp = metadata::build_and_sign(
      metadata::TimestampBody{cur.snapshot.version, metadata::snapshot_digest(cur.snapshot)},
      cur.timestamp.version + 1, s.clock + s.expiry.timestamp, s.keys.timestamp);
  s.history.push_back(cur);
}

bool valid_name(const std::string& name) {
  if (name.empty() || name.size() > metadata::kMaxTargetName) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
  });
}

Bytes read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& p, ByteView data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

nlohmann::json seeds_json(const std::vector<crypto::SigningKeyPair>& keys) {
  auto arr = nlohmann::json::array();
  for (const auto& k : keys) arr.push_back(to_hex(k.seed()));
  return arr;
}

std::vector<crypto::SigningKeyPair> seeds_from_json(const nlohmann::json& j) {
  std::vector<crypto::SigningKeyPair> out;
  for (const auto& s : j) {
    auto raw = from_hex(s.get<std::string>());
    if (raw.size() != crypto::kSeedSize) throw std::runtime_error("bad key seed length");
    FixedBytes<crypto::kSeedSize> seed{};
    std::copy(raw.begin(), raw.end(), seed.begin());
    out.push_back(crypto::SigningKeyPair::from_seed(seed));
  }
  return out;
}

}  // namespace

std::string to_string(const TamperPolicy& p) {
  switch (p.kind) {
    case TamperPolicy::Kind::None: return "none";
    case TamperPolicy::Kind::FlipBitInEnvelope: return "flip:" + std::to_string(p.offset);
    case TamperPolicy::Kind::ServeStaleMetadata: return "stale";
    case TamperPolicy::Kind::SubstituteArtifact: return "substitute";
    case TamperPolicy::Kind::DropEnvelope: return "drop";
  }
  return "?";
}

TamperPolicy parse_tamper_policy(std::string_view text) {
  using K = TamperPolicy::Kind;
  if (text == "none") return {K::None, 0};
  if (text == "stale") return {K::ServeStaleMetadata, 0};
  if (text == "substitute") return {K::SubstituteArtifact, 0};
  if (text == "drop") return {K::DropEnvelope, 0};
  if (text.starts_with("flip:")) {
    return {K::FlipBitInEnvelope, std::stoull(std::string(text.substr(5)))};
  }
  throw std::invalid_argument("unknown tamper policy '" + std::string(text) + "'");
}

std::string to_string(RepoError e) {
  return e == RepoError::NotFound ? "NotFound" : "PublishRejected";
}

RepositoryState init_repository(std::span<const crypto::SigningKeyPair> root_keys,
                                const metadata::RootBody& root_body, OnlineKeys keys,
                                Encoding encoding, std::uint64_t clock, ExpiryPolicy expiry) {
  RepositoryState s;
  s.encoding = encoding;
  s.expiry = expiry;
  s.keys = std::move(keys);
  s.clock = clock;
  auto& cur = s.current;
  cur.root = metadata::build_and_sign(root_body, 1, clock + expiry.root, root_keys);
  cur.targets = metadata::build_and_sign(metadata::TargetsBody{}, 1, clock + expiry.targets,
                                         s.keys.targets);
  cur.snapshot = metadata::build_and_sign(metadata::SnapshotBody{1, 1}, 1, clock + expiry.snapshot,
                                          s.keys.snapshot);
  cur.timestamp = metadata::build_and_sign(
      metadata::TimestampBody{1, metadata::snapshot_digest(cur.snapshot)}, 1,
      clock + expiry.timestamp, s.keys.timestamp);
  s.history.push_back(cur);
  return s;
}

RepositoryState publish(RepositoryState state, const std::string& name, ByteView envelope) {
  if (!valid_name(name)) reject("bad target name '" + name + "'");
  auth::UpdateEnvelope env;
  try {
    env = auth::parse_envelope(envelope);
  } catch (const MalformedInput& e) {
    reject(e.what());
  }
  if (env.token.artifact_size != env.artifact.size() ||
      env.token.artifact_hash != crypto::hash(env.artifact)) {
    reject("token does not describe the enclosed artifact");
  }

  auto body = state.current.targets.as<metadata::TargetsBody>();
  metadata::TargetRecord record{name, env.token.artifact_hash, env.token.artifact_size, env.token};
  auto it = std::find_if(body.entries.begin(), body.entries.end(),
                         [&](const auto& e) { return e.name == name; });
  if (it != body.entries.end()) {
    *it = record;
  } else {
    body.entries.push_back(record);
  }
  state.current.targets =
      metadata::build_and_sign(std::move(body), state.current.targets.version + 1,
                               state.clock + state.expiry.targets, state.keys.targets);
  sign_snapshot_and_timestamp(state);
  state.envelopes[name] = Bytes(envelope.begin(), envelope.end());
  return state;
}

RepositoryState refresh_timestamp(RepositoryState state) {
  auto& cur = state.current;
  cur.timestamp = metadata::build_and_sign(
      metadata::TimestampBody{cur.snapshot.version, metadata::snapshot_digest(cur.snapshot)},
      cur.timestamp.version + 1, state.clock + state.expiry.timestamp, state.keys.timestamp);
  state.history.push_back(cur);
  return state;
}

RepositoryState advance_clock(RepositoryState state, std::uint64_t ticks) {
  state.clock += ticks;
  return state;
}

RepositoryState set_tamper_policy(RepositoryState state, TamperPolicy policy) {
  state.tamper = policy;
  return state;
}

RepositoryState rotate_root(RepositoryState state,
                            std::span<const crypto::SigningKeyPair> signing_keys,
                            const metadata::RootBody& new_body, OnlineKeys new_keys) {
  state.keys = std::move(new_keys);
  auto& cur = state.current;
  cur.root = metadata::build_and_sign(new_body, cur.root.version + 1,
                                      state.clock + state.expiry.root, signing_keys);
  cur.targets = metadata::build_and_sign(cur.targets.body, cur.targets.version + 1,
                                         state.clock + state.expiry.targets, state.keys.targets);
  sign_snapshot_and_timestamp(state);
  return state;
}

Bytes fetch_metadata(const RepositoryState& state, RoleKind role) {
  const MetadataSet& set = state.tamper.kind == TamperPolicy::Kind::ServeStaleMetadata
                               ? state.history.front()
                               : state.current;
  return metadata::serialize(set.get(role), state.encoding);
}

Bytes fetch_envelope(const RepositoryState& state, const std::string& name) {
  auto it = state.envelopes.find(name);
  if (it == state.envelopes.end() || state.tamper.kind == TamperPolicy::Kind::DropEnvelope) {
    throw RepoFailure(RepoError::NotFound, "no envelope named '" + name + "'");
  }
  Bytes bytes = it->second;
  switch (state.tamper.kind) {
    case TamperPolicy::Kind::FlipBitInEnvelope: {
      auto bit = state.tamper.offset % (bytes.size() * 8);
      bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
      break;
    }
    case TamperPolicy::Kind::SubstituteArtifact:
      for (auto i = auth::kEnvelopeHeaderSize; i < bytes.size(); ++i) bytes[i] ^= 0xff;
      break;
    default:
      break;
  }
  return bytes;
}

void save_repository(const RepositoryState& state, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "envelopes");
  fs::create_directories(dir / "history");
  fs::create_directories(dir / "keys");
  auto ext = [&](const std::string& stem) { return stem + ".meta"; };
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const auto& set = state.history[i];
    for (auto role : metadata::kAllRoles) {
      write_file(dir / "history" / ext(std::to_string(i) + "." + metadata::to_string(role)),
                 metadata::serialize(set.get(role), state.encoding));
    }
    write_file(dir / ext("root." + std::to_string(set.root.version)),
               metadata::serialize(set.root, state.encoding));
    write_file(dir / ext("targets." + std::to_string(set.targets.version)),
               metadata::serialize(set.targets, state.encoding));
    write_file(dir / "history" / ext("snapshot." + std::to_string(set.snapshot.version)),
               metadata::serialize(set.snapshot, state.encoding));
    write_file(dir / "history" / ext("timestamp." + std::to_string(set.timestamp.version)),
               metadata::serialize(set.timestamp, state.encoding));
  }
  write_file(dir / "snapshot.meta", metadata::serialize(state.current.snapshot, state.encoding));
  write_file(dir / "timestamp.meta", metadata::serialize(state.current.timestamp, state.encoding));
  for (const auto& [name, bytes] : state.envelopes) {
    write_file(dir / "envelopes" / (name + ".env"), bytes);
  }
  nlohmann::json conf = {
      {"encoding", metadata::to_string(state.encoding)},
      {"clock", state.clock},
      {"history", state.history.size()},
      {"tamper", to_string(state.tamper)},
      {"expiry",
       {{"root", state.expiry.root},
        {"targets", state.expiry.targets},
        {"snapshot", state.expiry.snapshot},
        {"timestamp", state.expiry.timestamp}}},
  };
  auto text = conf.dump(2);
  write_file(dir / "repository.json", as_bytes(text));
  nlohmann::json keys = {{"targets", seeds_json(state.keys.targets)},
                         {"snapshot", seeds_json(state.keys.snapshot)},
                         {"timestamp", seeds_json(state.keys.timestamp)}};
  auto key_text = keys.dump(2);
  write_file(dir / "keys" / "online.json", as_bytes(key_text));
}

RepositoryState load_repository(const std::filesystem::path& dir) {
  RepositoryState s;
  auto conf_bytes = read_file(dir / "repository.json");
  auto conf = nlohmann::json::parse(conf_bytes.begin(), conf_bytes.end());
  s.encoding = conf.at("encoding") == "json" ? Encoding::Json : Encoding::FixedBinary;
  s.clock = conf.at("clock").get<std::uint64_t>();
  s.tamper = parse_tamper_policy(conf.at("tamper").get<std::string>());
  const auto& ex = conf.at("expiry");
  s.expiry = {ex.at("root"), ex.at("targets"), ex.at("snapshot"), ex.at("timestamp")};
  auto key_bytes = read_file(dir / "keys" / "online.json");
  auto keys = nlohmann::json::parse(key_bytes.begin(), key_bytes.end());
  s.keys = {seeds_from_json(keys.at("targets")), seeds_from_json(keys.at("snapshot")),
            seeds_from_json(keys.at("timestamp"))};

  auto count = conf.at("history").get<std::size_t>();
  for (std::size_t i = 0; i < count; ++i) {
    MetadataSet set;
    auto load = [&](RoleKind role) {
      return metadata::parse(
          read_file(dir / "history" /
                    (std::to_string(i) + "." + metadata::to_string(role) + ".meta")),
          s.encoding);
    };
    set.root = load(RoleKind::Root);
    set.targets = load(RoleKind::Targets);
    set.snapshot = load(RoleKind::Snapshot);
    set.timestamp = load(RoleKind::Timestamp);
    s.history.push_back(std::move(set));
  }
  if (s.history.empty()) throw std::runtime_error("repository has no metadata history");
  s.current = s.history.back();
  if (std::filesystem::exists(dir / "envelopes")) {
    for (const auto& entry : std::filesystem::directory_iterator(dir / "envelopes")) {
      if (entry.path().extension() == ".env") {
        s.envelopes[entry.path().stem().string()] = read_file(entry.path());
      }
    }
  }
  return s;
}

}  // namespace assured::repo
