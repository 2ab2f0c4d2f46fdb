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

#include "assured/crypto.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>

#include <atomic>
#include <memory>

namespace assured::crypto {

namespace {

std::atomic<std::uint64_t> g_verifications{0};

struct PkeyDeleter {
  void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* p) const { EVP_MD_CTX_free(p); }
};
struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
};
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

[[noreturn]] void openssl_failure(const char* what) {
  throw std::runtime_error(std::string("openssl: ") + what);
}

MacTag hmac_parts(const FixedBytes<32>& key, std::initializer_list<ByteView> parts) {
  Bytes message;
  for (auto p : parts) message.insert(message.end(), p.begin(), p.end());
  MacTag tag;
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), message.data(),
           message.size(), tag.bytes.data(), &len) == nullptr ||
      len != kMacTagSize) {
    openssl_failure("HMAC");
  }
  return tag;
}

Bytes aes_ctr(const FixedBytes<32>& key, std::uint64_t sequence, ByteView input) {
  FixedBytes<16> iv{};
  for (int i = 0; i < 8; ++i) iv[i] = static_cast<std::uint8_t>(sequence >> (56 - 8 * i));
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  if (!ctx) openssl_failure("EVP_CIPHER_CTX_new");
  if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_ctr(), nullptr, key.data(), iv.data()) != 1) {
    openssl_failure("EVP_EncryptInit_ex");
  }
  Bytes out(input.size());
  int len = 0;
  if (!input.empty() &&
      EVP_EncryptUpdate(ctx.get(), out.data(), &len, input.data(),
                        static_cast<int>(input.size())) != 1) {
    openssl_failure("EVP_EncryptUpdate");
  }
  return out;
}

}  // namespace

Digest hash(ByteView data) {
  Digest d;
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), d.bytes.data(), &len, EVP_sha256(), nullptr) != 1) {
    openssl_failure("EVP_Digest");
  }
  return d;
}

Digest key_id(const PublicKey& key) { return hash(key.bytes); }

SigningKeyPair SigningKeyPair::from_seed(const FixedBytes<kSeedSize>& seed) {
  PkeyPtr pkey(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, seed.data(), seed.size()));
  if (!pkey) openssl_failure("EVP_PKEY_new_raw_private_key");
  PublicKey pub;
  std::size_t len = pub.bytes.size();
  if (EVP_PKEY_get_raw_public_key(pkey.get(), pub.bytes.data(), &len) != 1 ||
      len != kPublicKeySize) {
    openssl_failure("EVP_PKEY_get_raw_public_key");
  }
  return SigningKeyPair(seed, pub);
}

Signature sign(const SigningKeyPair& key, ByteView message) {
  PkeyPtr pkey(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, key.seed().data(),
                                            key.seed().size()));
  if (!pkey) openssl_failure("EVP_PKEY_new_raw_private_key");
  MdCtxPtr ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, pkey.get()) != 1) {
    openssl_failure("EVP_DigestSignInit");
  }
  Signature sig;
  std::size_t len = sig.bytes.size();
  if (EVP_DigestSign(ctx.get(), sig.bytes.data(), &len, message.data(), message.size()) != 1 ||
      len != kSignatureSize) {
    openssl_failure("EVP_DigestSign");
  }
  return sig;
}

bool verify(const PublicKey& pub, ByteView message, const Signature& sig) {
  g_verifications.fetch_add(1, std::memory_order_relaxed);
  PkeyPtr pkey(
      EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, pub.bytes.data(), pub.bytes.size()));
  if (!pkey) return false;
  MdCtxPtr ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, pkey.get()) != 1) {
    return false;
  }
  return EVP_DigestVerify(ctx.get(), sig.bytes.data(), sig.bytes.size(), message.data(),
                          message.size()) == 1;
}

bool verify_encoded(ByteView pub, ByteView message, ByteView sig) {
  if (pub.size() != kPublicKeySize || sig.size() != kSignatureSize) {
    g_verifications.fetch_add(1, std::memory_order_relaxed);
    return false;
  }
  PublicKey k;
  Signature s;
  std::copy(pub.begin(), pub.end(), k.bytes.begin());
  std::copy(sig.begin(), sig.end(), s.bytes.begin());
  return verify(k, message, s);
}

std::uint64_t verification_count() noexcept {
  return g_verifications.load(std::memory_order_relaxed);
}

void reset_verification_count() noexcept { g_verifications.store(0, std::memory_order_relaxed); }

MacTag mac(const MacKey& key, ByteView message) { return hmac_parts(key.bytes, {message}); }

bool tags_equal(const MacTag& a, const MacTag& b) noexcept {
  return CRYPTO_memcmp(a.bytes.data(), b.bytes.data(), a.bytes.size()) == 0;
}

SessionKeys derive_session_keys(const MacKey& master, ByteView controller_nonce,
                                ByteView device_nonce) {
  if (controller_nonce.size() != kNonceSize || device_nonce.size() != kNonceSize) {
    throw Failure<KeyDerivationError>(KeyDerivationError::BadNonceLength,
                                      "session nonces must be 16 bytes");
  }
  SessionKeys keys;
  keys.enc_key =
      hmac_parts(master.bytes, {as_bytes("ASSURED-ENC"), controller_nonce, device_nonce}).bytes;
  keys.mac_key =
      hmac_parts(master.bytes, {as_bytes("ASSURED-MAC"), controller_nonce, device_nonce}).bytes;
  return keys;
}

std::string to_string(ChannelError e) {
  switch (e) {
    case ChannelError::AuthFailure: return "AuthFailure";
    case ChannelError::ReplayOrReorder: return "ReplayOrReorder";
    case ChannelError::Malformed: return "Malformed";
  }
  return "?";
}

ChannelFrame seal(const SessionKeys& keys, std::uint64_t sequence, ByteView plaintext) {
  if (plaintext.size() > UINT32_MAX) throw std::length_error("frame payload too large");
  ByteWriter w;
  w.u64(sequence).u32(static_cast<std::uint32_t>(plaintext.size()));
  w.raw(aes_ctr(keys.enc_key, sequence, plaintext));
  Bytes out = std::move(w).take();
  auto tag = hmac_parts(keys.mac_key, {out});
  out.insert(out.end(), tag.bytes.begin(), tag.bytes.end());
  return ChannelFrame{std::move(out)};
}

Bytes open(const SessionKeys& keys, std::uint64_t expected_sequence, const ChannelFrame& frame) {
  const auto& b = frame.bytes;
  if (b.size() < kFrameOverhead) {
    throw ChannelFailure(ChannelError::Malformed, "frame shorter than header and tag");
  }
  ByteView authenticated(b.data(), b.size() - kMacTagSize);
  MacTag received;
  std::copy(b.end() - kMacTagSize, b.end(), received.bytes.begin());
  if (!tags_equal(hmac_parts(keys.mac_key, {authenticated}), received)) {
    throw ChannelFailure(ChannelError::AuthFailure, "frame tag mismatch");
  }
  ByteReader r(authenticated);
  std::uint64_t sequence = r.u64();
  std::uint32_t length = r.u32();
  if (length != r.remaining()) {
    throw ChannelFailure(ChannelError::Malformed, "frame length field disagrees with size");
  }
  if (sequence != expected_sequence) {
    throw ChannelFailure(ChannelError::ReplayOrReorder,
                         "frame sequence " + std::to_string(sequence) + ", expected " +
                             std::to_string(expected_sequence));
  }
  return aes_ctr(keys.enc_key, sequence, r.raw(length));
}

Drbg::Drbg(ByteView seed) { key_.bytes = hash(seed).bytes; }

Drbg Drbg::from_seed(std::uint64_t seed, std::string_view label) {
  ByteWriter w;
  w.u64(seed).raw(as_bytes(label));
  return Drbg(w.bytes());
}

Drbg Drbg::from_os() {
  FixedBytes<32> seed{};
  if (RAND_bytes(seed.data(), static_cast<int>(seed.size())) != 1) openssl_failure("RAND_bytes");
  return Drbg(seed);
}

void Drbg::fill(std::span<std::uint8_t> out) {
  std::size_t filled = 0;
  while (filled < out.size()) {
    ByteWriter block;
    block.u64(counter_++);
    auto t = mac(key_, block.bytes());
    std::size_t n = std::min(t.bytes.size(), out.size() - filled);
    std::copy_n(t.bytes.begin(), n, out.begin() + static_cast<std::ptrdiff_t>(filled));
    filled += n;
  }
}

std::uint64_t Drbg::next_u64() { return load_be64(bytes<8>()); }

SigningKeyPair generate_signing_key(Drbg& rng) {
  return SigningKeyPair::from_seed(rng.bytes<kSeedSize>());
}

MacKey generate_mac_key(Drbg& rng) { return MacKey{rng.bytes<kMacKeySize>()}; }

}  // namespace assured::crypto
