#pragma once

#include <cstdint>

#include "caliper/bytes.hpp"
#include "caliper/crypto.hpp"

namespace caliper {

/// RSA public half: modulus plus exponent. Serialized as version byte,
/// length-prefixed modulus, 4-byte exponent.
struct RsaPublicKey {
  Bytes n;
  std::uint32_t e = 65537;

  std::size_t modulus_len() const { return n.size(); }
  Bytes serialize() const;
  static RsaPublicKey deserialize(BytesView data);
  bool operator==(const RsaPublicKey&) const = default;
};

/// The private key is the raw private exponent d, left-padded to the
/// modulus length. It is exactly the byte string the vault encodes and the
/// challenge-response releases; signing requires d plus the public half.
struct RsaKeyPair {
  RsaPublicKey pub;
  Bytes d;
};

/// Deterministic keygen: primes are drawn from the caller's stream, so a
/// fixed seed reproduces the pair. bits must be a multiple of 16.
RsaKeyPair rsa_generate(std::size_t bits, Rng& rng);

/// PKCS#1 v1.5 signature over SHA-256(message).
Bytes rsa_sign(BytesView private_d, const RsaPublicKey& pub, BytesView message);
bool rsa_verify(const RsaPublicKey& pub, BytesView message, BytesView signature);

}  // namespace caliper
