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
#include <openssl/evp.h>

#include <set>

#include "assured/crypto.hpp"

using namespace assured;
using namespace assured::crypto;

namespace {

template <std::size_t N>
FixedBytes<N> fixed_hex(std::string_view hex) {
  auto b = from_hex(hex);
  REQUIRE(b.size() == N);
  FixedBytes<N> out{};
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

// Independent AES-256 block encryption, used to recompute the CTR keystream.
FixedBytes<16> aes_block(const FixedBytes<32>& key, const FixedBytes<16>& in) {
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  EVP_EncryptInit_ex(ctx, EVP_aes_256_ecb(), nullptr, key.data(), nullptr);
  EVP_CIPHER_CTX_set_padding(ctx, 0);
  FixedBytes<16> out{};
  int len = 0;
  EVP_EncryptUpdate(ctx, out.data(), &len, in.data(), 16);
  EVP_CIPHER_CTX_free(ctx);
  return out;
}

SessionKeys test_keys() {
  Drbg rng = Drbg::from_seed(7, "channel");
  MacKey master = generate_mac_key(rng);
  auto cn = rng.bytes<16>();
  auto dn = rng.bytes<16>();
  return derive_session_keys(master, cn, dn);
}

}  // namespace

TEST_CASE("hash matches published SHA-256 vectors") {
  CHECK(to_hex(hash({}).bytes) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(to_hex(hash(as_bytes("abc")).bytes) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(hash(as_bytes("abc")) == hash(as_bytes("abc")));
}

TEST_CASE("hash separates every single-bit flip of a 64-byte input") {
  Bytes input(64);
  for (std::size_t i = 0; i < input.size(); ++i) input[i] = static_cast<std::uint8_t>(i * 7);
  std::set<Digest> seen{hash(input)};
  for (std::size_t bit = 0; bit < input.size() * 8; ++bit) {
    Bytes m = input;
    m[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    seen.insert(hash(m));
  }
  CHECK(seen.size() == 64 * 8 + 1);
}

TEST_CASE("ed25519 matches RFC 8032 test vectors") {
  struct Vector {
    const char* seed;
    const char* pub;
    const char* msg;
    const char* sig;
  };
  const Vector vectors[] = {
      {"9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
       "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a", "",
       "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b4"
       "6bd25bf5f0595bbe24655141438e7a100b"},
      {"4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
       "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c", "72",
       "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15996e458f3613d0f11d"
       "8c387b2eaeb4302aeeb00d291612bb0c00"},
  };
  for (const auto& v : vectors) {
    auto key = SigningKeyPair::from_seed(fixed_hex<32>(v.seed));
    CHECK(to_hex(key.public_key().bytes) == v.pub);
    auto msg = from_hex(v.msg);
    auto sig = sign(key, msg);
    CHECK(to_hex(sig.bytes) == v.sig);
    CHECK(verify(key.public_key(), msg, sig));
  }
}

TEST_CASE("verify rejects wrong message, wrong key, and every flipped signature bit") {
  Drbg rng = Drbg::from_seed(1, "sig");
  auto key = generate_signing_key(rng);
  auto other = generate_signing_key(rng);
  Bytes msg = {1, 2, 3, 4};
  auto sig = sign(key, msg);
  CHECK(verify(key.public_key(), msg, sig));
  CHECK_FALSE(verify(key.public_key(), Bytes{1, 2, 3, 5}, sig));
  CHECK_FALSE(verify(other.public_key(), msg, sig));

  int accepted = 0;
  for (std::size_t bit = 0; bit < kSignatureSize * 8; ++bit) {
    Signature s = sig;
    s.bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    accepted += verify(key.public_key(), msg, s) ? 1 : 0;
  }
  CHECK(accepted == 0);
}

TEST_CASE("verify_encoded rejects malformed encodings without crashing") {
  Drbg rng = Drbg::from_seed(2, "sig");
  auto key = generate_signing_key(rng);
  Bytes msg = {9};
  auto sig = sign(key, msg);
  CHECK(verify_encoded(key.public_key().bytes, msg, sig.bytes));
  CHECK_FALSE(verify_encoded(Bytes(31, 1), msg, sig.bytes));
  CHECK_FALSE(verify_encoded(key.public_key().bytes, msg, Bytes(63, 0)));
  CHECK_FALSE(verify_encoded(Bytes(32, 0xff), msg, sig.bytes));
}

TEST_CASE("verification counter counts every verify call") {
  Drbg rng = Drbg::from_seed(3, "sig");
  auto key = generate_signing_key(rng);
  auto sig = sign(key, Bytes{1});
  reset_verification_count();
  CHECK(verification_count() == 0);
  VerificationScope scope;
  verify(key.public_key(), Bytes{1}, sig);
  verify(key.public_key(), Bytes{2}, sig);
  CHECK(scope.delta() == 2);
  CHECK(verification_count() == 2);
}

TEST_CASE("hmac matches RFC 4231 vectors") {
  // Keys shorter than the block size are zero-padded by HMAC itself, so the
  // 32-byte zero-extended key yields the published tag.
  MacKey k1{};
  std::fill_n(k1.bytes.begin(), 20, 0x0b);
  CHECK(to_hex(mac(k1, as_bytes("Hi There")).bytes) ==
        "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7");
  MacKey k2{};
  std::copy_n("Jefe", 4, k2.bytes.begin());
  CHECK(to_hex(mac(k2, as_bytes("what do ya want for nothing?")).bytes) ==
        "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843");
  CHECK(mac(k2, as_bytes("x")) == mac(k2, as_bytes("x")));
}

TEST_CASE("hmac under 100 random key pairs never collides") {
  Drbg rng = Drbg::from_seed(4, "mac");
  Bytes msg = {0xde, 0xad};
  for (int i = 0; i < 100; ++i) {
    auto a = generate_mac_key(rng);
    auto b = generate_mac_key(rng);
    REQUIRE(a != b);
    CHECK(mac(a, msg) != mac(b, msg));
  }
}

TEST_CASE("derive_session_keys") {
  Drbg rng = Drbg::from_seed(5, "kdf");
  SUBCASE("deterministic and matches the labeled HMAC construction") {
    auto master = generate_mac_key(rng);
    auto cn = rng.bytes<16>();
    auto dn = rng.bytes<16>();
    auto keys = derive_session_keys(master, cn, dn);
    CHECK(keys == derive_session_keys(master, cn, dn));
    Bytes enc_input(as_bytes("ASSURED-ENC").begin(), as_bytes("ASSURED-ENC").end());
    enc_input.insert(enc_input.end(), cn.begin(), cn.end());
    enc_input.insert(enc_input.end(), dn.begin(), dn.end());
    CHECK(keys.enc_key == mac(master, enc_input).bytes);
  }
  SUBCASE("enc and mac keys differ over 1000 random inputs") {
    for (int i = 0; i < 1000; ++i) {
      auto keys = derive_session_keys(generate_mac_key(rng), rng.bytes<16>(), rng.bytes<16>());
      REQUIRE(keys.enc_key != keys.mac_key);
    }
  }
  SUBCASE("swapping the nonces changes the keys") {
    for (int i = 0; i < 100; ++i) {
      auto master = generate_mac_key(rng);
      auto a = rng.bytes<16>();
      auto b = rng.bytes<16>();
      CHECK(derive_session_keys(master, a, b) != derive_session_keys(master, b, a));
    }
  }
  SUBCASE("wrong nonce length") {
    auto master = generate_mac_key(rng);
    CHECK_THROWS_AS(derive_session_keys(master, Bytes(15), Bytes(16)),
                    Failure<KeyDerivationError>);
    CHECK_THROWS_AS(derive_session_keys(master, Bytes(16), Bytes(17)),
                    Failure<KeyDerivationError>);
  }
}

TEST_CASE("seal produces the documented frame layout") {
  auto keys = test_keys();
  Bytes plain(40);
  for (std::size_t i = 0; i < plain.size(); ++i) plain[i] = static_cast<std::uint8_t>(i);
  auto frame = seal(keys, 0x0102030405060708ull, plain);
  const auto& b = frame.bytes;
  REQUIRE(b.size() == 8 + 4 + plain.size() + 32);
  CHECK(to_hex(ByteView(b).first(12)) == "010203040506070800000028");

  // Keystream block i is AES(enc_key, sequence || i) with i as a 64-bit BE
  // counter in the low half.
  for (std::size_t i = 0; i < plain.size(); ++i) {
    FixedBytes<16> counter{};
    for (int j = 0; j < 8; ++j) counter[j] = b[j];
    counter[15] = static_cast<std::uint8_t>(i / 16);
    auto ks = aes_block(keys.enc_key, counter);
    CHECK((b[12 + i] ^ ks[i % 16]) == plain[i]);
  }
  MacKey mk{keys.mac_key};
  auto tag = mac(mk, ByteView(b).first(b.size() - 32));
  CHECK(std::equal(tag.bytes.begin(), tag.bytes.end(), b.end() - 32));
}

TEST_CASE("open inverts seal and enforces the sequence") {
  auto keys = test_keys();
  Bytes plain = {'h', 'e', 'l', 'l', 'o'};
  auto frame = seal(keys, 3, plain);
  CHECK(open(keys, 3, frame) == plain);
  CHECK(open(keys, 0, seal(keys, 0, {})).empty());
  try {
    open(keys, 4, frame);
    FAIL("replay accepted");
  } catch (const ChannelFailure& e) {
    CHECK(e.code() == ChannelError::ReplayOrReorder);
  }
}

TEST_CASE("truncated frames are Malformed") {
  auto keys = test_keys();
  auto frame = seal(keys, 0, Bytes{1, 2, 3});
  for (std::size_t n = 0; n < kFrameOverhead; ++n) {
    ChannelFrame cut{Bytes(frame.bytes.begin(), frame.bytes.begin() + static_cast<long>(n))};
    try {
      open(keys, 0, cut);
      FAIL("truncated frame accepted");
    } catch (const ChannelFailure& e) {
      CHECK(e.code() == ChannelError::Malformed);
    }
  }
}

TEST_CASE("every single-bit flip of a sealed frame is an AuthFailure") {
  auto keys = test_keys();
  auto frame = seal(keys, 1, Bytes{'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'});
  std::size_t auth_failures = 0;
  for (std::size_t bit = 0; bit < frame.bytes.size() * 8; ++bit) {
    ChannelFrame m = frame;
    m.bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    try {
      open(keys, 1, m);
    } catch (const ChannelFailure& e) {
      if (e.code() == ChannelError::AuthFailure) ++auth_failures;
    }
  }
  CHECK(auth_failures == frame.bytes.size() * 8);
}

TEST_CASE("frames sealed under other session keys fail authentication") {
  Drbg rng = Drbg::from_seed(8, "sessions");
  auto master = generate_mac_key(rng);
  auto cn = rng.bytes<16>();
  auto old_keys = derive_session_keys(master, cn, rng.bytes<16>());
  auto new_keys = derive_session_keys(master, cn, rng.bytes<16>());
  auto frame = seal(old_keys, 0, Bytes{1});
  CHECK_THROWS_AS(open(new_keys, 0, frame), ChannelFailure);
}

TEST_CASE("drbg is deterministic per seed and label") {
  auto a = Drbg::from_seed(11, "x").bytes<48>();
  auto b = Drbg::from_seed(11, "x").bytes<48>();
  auto c = Drbg::from_seed(11, "y").bytes<48>();
  auto d = Drbg::from_seed(12, "x").bytes<48>();
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a != d);
}
