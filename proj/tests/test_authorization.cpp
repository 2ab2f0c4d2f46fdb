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

#include "assured/authorization.hpp"

using namespace assured;
using namespace assured::auth;

namespace {

struct Fixture {
  crypto::Drbg rng = crypto::Drbg::from_seed(21, "auth");
  crypto::SigningKeyPair oem = crypto::generate_signing_key(rng);
  crypto::SigningKeyPair rogue = crypto::generate_signing_key(rng);
  Bytes artifact = make_artifact(256);

  static Bytes make_artifact(std::size_t n) {
    Bytes a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = static_cast<std::uint8_t>(i * 31 + 5);
    return a;
  }
};

Constraints wildcard(std::uint64_t new_version) {
  Constraints c;
  c.new_version = new_version;
  return c;
}

}  // namespace

TEST_CASE_FIXTURE(Fixture, "issued token verifies against its artifact") {
  auto token = issue_token(oem, artifact, wildcard(2));
  CHECK(token.artifact_hash == crypto::hash(artifact));
  CHECK(token.artifact_size == 256);
  crypto::VerificationScope scope;
  CHECK(verify_token(oem.public_key(), artifact, token) == TokenVerdict::Accept);
  CHECK(scope.delta() == 1);
}

TEST_CASE_FIXTURE(Fixture, "token binds size, hash, and signer") {
  auto token = issue_token(oem, artifact, wildcard(2));
  Bytes longer = artifact;
  longer.push_back(0);
  CHECK(verify_token(oem.public_key(), longer, token) == TokenVerdict::SizeMismatch);

  auto forged = issue_token(rogue, artifact, wildcard(2));
  CHECK(verify_token(oem.public_key(), artifact, forged) == TokenVerdict::BadSignature);
}

TEST_CASE_FIXTURE(Fixture, "every bit flip of the artifact is a HashMismatch") {
  auto token = issue_token(oem, artifact, wildcard(2));
  crypto::VerificationScope scope;
  for (std::size_t bit = 0; bit < artifact.size() * 8; ++bit) {
    Bytes m = artifact;
    m[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    REQUIRE(verify_token(oem.public_key(), m, token) == TokenVerdict::HashMismatch);
  }
  CHECK(scope.delta() == 0);
}

TEST_CASE_FIXTURE(Fixture, "every bit flip of the encoded token is rejected") {
  auto token = issue_token(oem, artifact, wildcard(2));
  auto encoded = encode_token(token);
  for (std::size_t bit = 0; bit < encoded.size() * 8; ++bit) {
    auto m = encoded;
    m[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    auto mutant = decode_token(m);
    REQUIRE(verify_token(oem.public_key(), artifact, mutant) != TokenVerdict::Accept);
  }
}

TEST_CASE_FIXTURE(Fixture, "token encoding is exactly 136 bytes and round-trips") {
  for (std::uint64_t v = 1; v <= 20; ++v) {
    Constraints c{rng.next_u64(), rng.next_u64(), 0, v};
    auto token = issue_token(oem, make_artifact(v * 3), c);
    auto encoded = encode_token(token);
    CHECK(encoded.size() == 136);
    CHECK(decode_token(encoded) == token);
  }
  CHECK_THROWS_AS(decode_token(Bytes(135)), MalformedInput);
  CHECK_THROWS_AS(decode_token(Bytes(137)), MalformedInput);
}

TEST_CASE("decode_token field offsets from a hand-assembled string") {
  Bytes raw;
  raw.insert(raw.end(), 32, 0x11);                                      // hash 0..32
  for (int i = 0; i < 7; ++i) raw.push_back(0);                        // size 32..40
  raw.push_back(0x20);
  for (std::uint8_t f = 1; f <= 4; ++f) {                              // constraints 40..72
    for (int i = 0; i < 7; ++i) raw.push_back(0);
    raw.push_back(f);
  }
  raw.insert(raw.end(), 64, 0xaa);                                      // signature 72..136
  REQUIRE(raw.size() == 136);
  auto t = decode_token(raw);
  CHECK(t.artifact_hash.bytes[0] == 0x11);
  CHECK(t.artifact_size == 0x20);
  CHECK(t.constraints == Constraints{1, 2, 3, 4});
  CHECK(std::all_of(t.signature.bytes.begin(), t.signature.bytes.end(),
                    [](auto b) { return b == 0xaa; }));
  auto region = signed_region(t);
  CHECK(region == Bytes(raw.begin(), raw.begin() + 72));
}

TEST_CASE_FIXTURE(Fixture, "issue_token rejects invalid constraints") {
  CHECK_THROWS_AS(issue_token(oem, artifact, Constraints{0, 0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(issue_token(oem, artifact, Constraints{0, 0, 3, 3}), std::invalid_argument);
  CHECK_NOTHROW(issue_token(oem, artifact, Constraints{0, 0, 3, 4}));
}

TEST_CASE("evaluate_constraints named cases") {
  CHECK(evaluate_constraints(wildcard(2), 7, 1001, 1) == ConstraintVerdict::Accept);
  CHECK(evaluate_constraints(wildcard(1), 7, 1001, 1) == ConstraintVerdict::VersionNotMonotonic);
  CHECK(evaluate_constraints(Constraints{0, 0, 3, 4}, 7, 1001, 2) ==
        ConstraintVerdict::PatchOrderViolation);
  CHECK(evaluate_constraints(Constraints{8, 0, 0, 2}, 7, 1001, 1) ==
        ConstraintVerdict::WrongModel);
  CHECK(evaluate_constraints(Constraints{7, 1002, 0, 2}, 7, 1001, 1) ==
        ConstraintVerdict::WrongDevice);
}

TEST_CASE("evaluate_constraints accepts exactly the stated conjunction") {
  std::size_t accepted = 0;
  for (std::uint64_t cm = 0; cm <= 2; ++cm)
    for (std::uint64_t ci = 0; ci <= 2; ++ci)
      for (std::uint64_t prev = 0; prev <= 3; ++prev)
        for (std::uint64_t nv = 1; nv <= 4; ++nv)
          for (std::uint64_t dm = 1; dm <= 2; ++dm)
            for (std::uint64_t di = 1; di <= 2; ++di)
              for (std::uint64_t installed = 0; installed <= 4; ++installed) {
                bool oracle = (cm == 0 || cm == dm) && (ci == 0 || ci == di) &&
                              nv > installed && (prev == 0 || prev == installed);
                auto v = evaluate_constraints({cm, ci, prev, nv}, dm, di, installed);
                REQUIRE((v == ConstraintVerdict::Accept) == oracle);
                if (v == ConstraintVerdict::Accept) ++accepted;
              }
  CHECK(accepted > 0);
}

TEST_CASE_FIXTURE(Fixture, "envelope layout and parsing") {
  auto env = build_envelope(issue_token(oem, artifact, wildcard(2)), artifact);
  auto bytes = serialize_envelope(env);
  CHECK(bytes.size() - artifact.size() == kEnvelopeHeaderSize);
  CHECK(kEnvelopeHeaderSize == 148);
  CHECK(parse_envelope(bytes) == env);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ASRD");

  Bytes truncated(bytes.begin(), bytes.end() - 1);
  CHECK_THROWS_AS(parse_envelope(truncated), MalformedInput);
  Bytes extended = bytes;
  extended.push_back(0);
  CHECK_THROWS_AS(parse_envelope(extended), MalformedInput);
  Bytes bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_envelope(bad_magic), MalformedInput);
  CHECK_THROWS_AS(parse_envelope(Bytes(10)), MalformedInput);
}
