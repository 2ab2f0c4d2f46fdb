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

#include <doctest.h>

#include <bit>
#include <fstream>
#include <unistd.h>

#include "assured/repository.hpp"
#include "metadata_support.hpp"

using namespace assured;
using namespace assured::repo;
using metadata::RoleKind;
using testing::RoleKeyring;

namespace {

RepositoryState fresh(const RoleKeyring& k, metadata::Encoding enc = metadata::Encoding::Json) {
  return init_repository(k.root, k.root_body(), {k.targets, k.snapshot, k.timestamp}, enc);
}

Bytes envelope_for(const crypto::SigningKeyPair& oem, std::uint64_t version, std::size_t size = 64) {
  Bytes artifact(size, static_cast<std::uint8_t>(version));
  auth::Constraints c;
  c.new_version = version;
  return auth::serialize_envelope(auth::build_envelope(auth::issue_token(oem, artifact, c), artifact));
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("assured-repo-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

}  // namespace

TEST_CASE("a new repository starts every role at version 1 and verifies") {
  RoleKeyring k(11);
  auto s = fresh(k);
  for (auto role : metadata::kAllRoles) CHECK(s.current.get(role).version == 1);
  CHECK(s.current.targets.as<metadata::TargetsBody>().entries.empty());
  CHECK(s.history.size() == 1);
  auto v = metadata::verify_full_chain(s.current.root, s.current, 0);
  CHECK(v.targets.entries.empty());
}

TEST_CASE("publish bumps targets, snapshot and timestamp but not root") {
  RoleKeyring k(12);
  auto oem = crypto::SigningKeyPair::from_seed(FixedBytes<32>{9});
  auto s = publish(fresh(k), "fw", envelope_for(oem, 2));
  CHECK(s.current.root.version == 1);
  CHECK(s.current.targets.version == 2);
  CHECK(s.current.snapshot.version == 2);
  CHECK(s.current.timestamp.version == 2);
  CHECK(s.history.size() == 2);
  auto v = metadata::verify_full_chain(s.current.root, s.current, 0);
  REQUIRE(v.targets.entries.size() == 1);
  CHECK(v.targets.entries[0].name == "fw");

  SUBCASE("republishing a name replaces its record") {
    auto s2 = publish(s, "fw", envelope_for(oem, 3));
    auto body = s2.current.targets.as<metadata::TargetsBody>();
    REQUIRE(body.entries.size() == 1);
    CHECK(body.entries[0].token.constraints.new_version == 3);
    CHECK(s2.current.targets.version == 3);
  }
}

TEST_CASE("publish rejects unusable names, unparseable envelopes and lying tokens") {
  RoleKeyring k(13);
  auto oem = crypto::SigningKeyPair::from_seed(FixedBytes<32>{9});
  auto s = fresh(k);
  auto env = envelope_for(oem, 2);
  auto rejected = [&](const std::string& name, ByteView bytes) {
    try {
      publish(s, name, bytes);
    } catch (const RepoFailure& e) {
      return e.code() == RepoError::PublishRejected;
    }
    return false;
  };
  CHECK(rejected("", env));
  CHECK(rejected(std::string(33, 'a'), env));
  CHECK(rejected("../escape", env));
  CHECK(rejected("has space", env));
  CHECK(rejected("fw", Bytes(10, 0)));
  auto lying = env;
  lying.back() ^= 1;
  CHECK(rejected("fw", lying));
  CHECK_FALSE(rejected(std::string(32, 'a'), env));
  CHECK_FALSE(rejected("fw-1.0_b", env));
}

TEST_CASE("publish does not check the OEM signature") {
  RoleKeyring k(14);
  auto rogue = crypto::SigningKeyPair::from_seed(FixedBytes<32>{0xee});
  CHECK_NOTHROW(publish(fresh(k), "fw", envelope_for(rogue, 2)));
}

TEST_CASE("refresh re-signs only the timestamp") {
  RoleKeyring k(15);
  auto s = advance_clock(fresh(k), 50);
  auto r = refresh_timestamp(s);
  CHECK(r.current.timestamp.version == 2);
  CHECK(r.current.timestamp.expires == 60);
  CHECK(r.current.snapshot == s.current.snapshot);
  CHECK(r.current.targets == s.current.targets);
  CHECK_NOTHROW(metadata::verify_full_chain(r.current.root, r.current, 55));
  CHECK_THROWS_AS(metadata::verify_full_chain(s.current.root, s.current, 55), metadata::ChainFailure);
}

TEST_CASE("state functions leave their input untouched") {
  RoleKeyring k(16);
  auto oem = crypto::SigningKeyPair::from_seed(FixedBytes<32>{9});
  const auto s = fresh(k);
  auto copy = s;
  auto after = publish(s, "fw", envelope_for(oem, 2));
  after = set_tamper_policy(advance_clock(after, 3), parse_tamper_policy("drop"));
  CHECK(s.current == copy.current);
  CHECK(s.envelopes.empty());
  CHECK(s.clock == 0);
}

TEST_CASE("tamper policy text round-trips") {
  for (auto text : {"none", "flip:0", "flip:1234", "stale", "substitute", "drop"}) {
    CHECK(to_string(parse_tamper_policy(text)) == text);
  }
  CHECK_THROWS_AS(parse_tamper_policy("shred"), std::invalid_argument);
}

TEST_CASE("tamper policies change what the mirror serves") {
  RoleKeyring k(17);
  auto oem = crypto::SigningKeyPair::from_seed(FixedBytes<32>{9});
  auto s = publish(fresh(k), "fw", envelope_for(oem, 2));
  const auto honest = fetch_envelope(s, "fw");
  CHECK(honest == s.envelopes.at("fw"));

  SUBCASE("flip changes exactly one bit") {
    auto t = set_tamper_policy(s, parse_tamper_policy("flip:1203"));
    auto bad = fetch_envelope(t, "fw");
    REQUIRE(bad.size() == honest.size());
    int diff = 0;
    for (std::size_t i = 0; i < bad.size(); ++i) diff += std::popcount<unsigned>(bad[i] ^ honest[i]);
    CHECK(diff == 1);
    CHECK(bad[1203 / 8] != honest[1203 / 8]);
  }
  SUBCASE("substitute keeps the token and replaces the artifact") {
    auto bad = fetch_envelope(set_tamper_policy(s, parse_tamper_policy("substitute")), "fw");
    CHECK(std::equal(bad.begin(), bad.begin() + auth::kEnvelopeHeaderSize, honest.begin()));
    CHECK(bad.back() == static_cast<std::uint8_t>(honest.back() ^ 0xff));
  }
  SUBCASE("drop hides the envelope") {
    auto t = set_tamper_policy(s, parse_tamper_policy("drop"));
    CHECK_THROWS_AS(fetch_envelope(t, "fw"), RepoFailure);
  }
  SUBCASE("stale serves the oldest metadata set") {
    auto t = set_tamper_policy(s, parse_tamper_policy("stale"));
    for (auto role : metadata::kAllRoles) {
      CHECK(fetch_metadata(t, role) == metadata::serialize(s.history.front().get(role), s.encoding));
    }
  }
  CHECK_THROWS_AS(fetch_envelope(s, "missing"), RepoFailure);
}

TEST_CASE("root rotation is verifiable from the old anchor") {
  RoleKeyring k(18);
  RoleKeyring next(19);
  auto s = fresh(k);
  const auto anchor = s.current.root;
  std::vector<crypto::SigningKeyPair> signers = k.root;
  signers.insert(signers.end(), next.root.begin(), next.root.end());
  auto r = rotate_root(s, signers, next.root_body(), {next.targets, next.snapshot, next.timestamp});
  CHECK(r.current.root.version == 2);
  auto v = metadata::verify_full_chain(anchor, r.current, 0);
  CHECK(v.versions.root == 2);
}

TEST_CASE("save and load reproduce the repository without root keys") {
  for (auto enc : {metadata::Encoding::Json, metadata::Encoding::FixedBinary}) {
    CAPTURE(metadata::to_string(enc));
    RoleKeyring k(20);
    auto oem = crypto::SigningKeyPair::from_seed(FixedBytes<32>{9});
    auto s = publish(fresh(k, enc), "fw", envelope_for(oem, 2));
    s = set_tamper_policy(advance_clock(s, 4), parse_tamper_policy("flip:7"));
    TempDir dir;
    save_repository(s, dir.path);
    auto loaded = load_repository(dir.path);
    CHECK(loaded.encoding == s.encoding);
    CHECK(loaded.clock == s.clock);
    CHECK(loaded.tamper == s.tamper);
    CHECK(loaded.current == s.current);
    CHECK(loaded.history.size() == s.history.size());
    CHECK(loaded.envelopes == s.envelopes);
    CHECK(loaded.keys.targets.size() == s.keys.targets.size());
    // The reloaded online keys still sign for their roles.
    auto next = publish(set_tamper_policy(loaded, {}), "fw2", envelope_for(oem, 3));
    CHECK_NOTHROW(metadata::verify_full_chain(s.current.root, next.current, next.clock));

    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir.path)) {
      if (!entry.is_regular_file()) continue;
      std::ifstream in(entry.path(), std::ios::binary);
      std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      for (const auto& root_key : k.root) {
        CHECK(content.find(to_hex(root_key.seed())) == std::string::npos);
        std::string raw(root_key.seed().begin(), root_key.seed().end());
        CHECK(content.find(raw) == std::string::npos);
      }
    }
  }
}
