#include "caliper/rsa.hpp"

#include <openssl/bn.h>

#include <memory>
#include <stdexcept>
#include <vector>

namespace caliper {

namespace {

struct BnDeleter {
  void operator()(BIGNUM* p) const { BN_clear_free(p); }
};
struct CtxDeleter {
  void operator()(BN_CTX* p) const { BN_CTX_free(p); }
};
using BnPtr = std::unique_ptr<BIGNUM, BnDeleter>;
using CtxPtr = std::unique_ptr<BN_CTX, CtxDeleter>;

BnPtr make_bn() {
  BnPtr p(BN_new());
  if (!p) throw std::runtime_error("BN_new failed");
  return p;
}

BnPtr bn_from_bytes(BytesView b) {
  BnPtr p(BN_bin2bn(b.data(), static_cast<int>(b.size()), nullptr));
  if (!p) throw std::runtime_error("BN_bin2bn failed");
  return p;
}

Bytes bn_to_bytes(const BIGNUM* v, std::size_t len) {
  Bytes out(len);
  if (BN_bn2binpad(v, out.data(), static_cast<int>(len)) < 0)
    throw std::runtime_error("BN_bn2binpad failed");
  return out;
}

const std::vector<std::uint32_t>& small_primes() {
  static const std::vector<std::uint32_t> primes = [] {
    std::vector<std::uint32_t> out;
    std::vector<bool> sieve(8000, true);
    for (std::uint32_t i = 2; i < sieve.size(); ++i) {
      if (!sieve[i]) continue;
      out.push_back(i);
      for (std::uint32_t j = i * i; j < sieve.size(); j += i) sieve[j] = false;
    }
    return out;
  }();
  return primes;
}

// Incremental search from an rng-drawn start; outcome is a pure function of
// the stream, so keygen is reproducible under a fixed seed.
BnPtr gen_prime(std::size_t bits, std::uint32_t pub_exp, Rng& rng, BN_CTX* ctx) {
  if (bits % 8 != 0) throw std::invalid_argument("prime size must be byte aligned");
  for (;;) {
    Bytes cand = rng.bytes(bits / 8);
    cand[0] |= 0xc0;  // top two bits keep the product at full width
    cand[cand.size() - 1] |= 0x01;
    BnPtr p = bn_from_bytes(cand);
    secure_wipe(cand);

    // walk odd candidates from the start point
    for (int step = 0; step < 4096; ++step) {
      bool composite = false;
      for (std::uint32_t sp : small_primes()) {
        BN_ULONG r = BN_mod_word(p.get(), sp);
        if (r == static_cast<BN_ULONG>(-1)) throw std::runtime_error("BN_mod_word failed");
        if (r == 0) {
          composite = true;
          break;
        }
        // the public exponent must be invertible mod p-1
        if (sp == pub_exp && r == 1) {
          composite = true;
          break;
        }
      }
      if (!composite) {
        int is_prime = BN_check_prime(p.get(), ctx, nullptr);
        if (is_prime < 0) throw std::runtime_error("BN_check_prime failed");
        if (is_prime == 1) {
          if (BN_num_bits(p.get()) == static_cast<int>(bits)) return p;
        }
      }
      if (!BN_add_word(p.get(), 2)) throw std::runtime_error("BN_add_word failed");
    }
    // start a fresh draw if the window was barren
  }
}

// EMSA-PKCS1-v1_5 with the SHA-256 DigestInfo prefix
Bytes emsa_encode(BytesView message, std::size_t k) {
  static const std::uint8_t kPrefix[] = {0x30, 0x31, 0x30, 0x0d, 0x06, 0x09, 0x60,
                                         0x86, 0x48, 0x01, 0x65, 0x03, 0x04, 0x02,
                                         0x01, 0x05, 0x00, 0x04, 0x20};
  Digest h = sha256(message);
  std::size_t t_len = sizeof(kPrefix) + h.size();
  if (k < t_len + 11) throw std::invalid_argument("modulus too small for PKCS#1 v1.5");
  Bytes em(k);
  em[0] = 0x00;
  em[1] = 0x01;
  std::size_t ps_len = k - t_len - 3;
  for (std::size_t i = 0; i < ps_len; ++i) em[2 + i] = 0xff;
  em[2 + ps_len] = 0x00;
  std::copy(std::begin(kPrefix), std::end(kPrefix), em.begin() + 3 + ps_len);
  std::copy(h.begin(), h.end(), em.end() - h.size());
  return em;
}

}  // namespace

Bytes RsaPublicKey::serialize() const {
  ByteWriter w;
  w.u8(1);
  w.field(n);
  w.u32(e);
  return w.take();
}

RsaPublicKey RsaPublicKey::deserialize(BytesView data) {
  ByteReader r(data);
  if (r.u8() != 1) throw ParseError("unsupported public key version");
  RsaPublicKey k;
  k.n = r.field();
  k.e = r.u32();
  return k;
}

RsaKeyPair rsa_generate(std::size_t bits, Rng& rng) {
  if (bits < 512 || bits % 16 != 0) throw std::invalid_argument("unsupported RSA key size");
  const std::uint32_t e_val = 65537;
  CtxPtr ctx(BN_CTX_new());
  if (!ctx) throw std::runtime_error("BN_CTX_new failed");

  for (;;) {
    BnPtr p = gen_prime(bits / 2, e_val, rng, ctx.get());
    BnPtr q = gen_prime(bits / 2, e_val, rng, ctx.get());
    if (BN_cmp(p.get(), q.get()) == 0) continue;

    BnPtr n = make_bn(), phi = make_bn(), p1 = make_bn(), q1 = make_bn();
    BnPtr e = make_bn(), d = make_bn(), one = make_bn();
    BN_one(one.get());
    if (!BN_mul(n.get(), p.get(), q.get(), ctx.get())) throw std::runtime_error("BN_mul failed");
    if (BN_num_bits(n.get()) != static_cast<int>(bits)) continue;
    if (!BN_sub(p1.get(), p.get(), one.get()) || !BN_sub(q1.get(), q.get(), one.get()))
      throw std::runtime_error("BN_sub failed");
    if (!BN_mul(phi.get(), p1.get(), q1.get(), ctx.get()))
      throw std::runtime_error("BN_mul failed");
    if (!BN_set_word(e.get(), e_val)) throw std::runtime_error("BN_set_word failed");
    if (!BN_mod_inverse(d.get(), e.get(), phi.get(), ctx.get())) continue;

    RsaKeyPair out;
    out.pub.n = bn_to_bytes(n.get(), bits / 8);
    out.pub.e = e_val;
    out.d = bn_to_bytes(d.get(), bits / 8);
    return out;
  }
}

Bytes rsa_sign(BytesView private_d, const RsaPublicKey& pub, BytesView message) {
  if (private_d.size() != pub.modulus_len())
    throw std::invalid_argument("private exponent length mismatch");
  CtxPtr ctx(BN_CTX_new());
  if (!ctx) throw std::runtime_error("BN_CTX_new failed");
  BnPtr n = bn_from_bytes(pub.n);
  BnPtr d = bn_from_bytes(private_d);
  Bytes em = emsa_encode(message, pub.modulus_len());
  BnPtr m = bn_from_bytes(em);
  BnPtr s = make_bn();
  if (!BN_mod_exp(s.get(), m.get(), d.get(), n.get(), ctx.get()))
    throw std::runtime_error("BN_mod_exp failed");
  return bn_to_bytes(s.get(), pub.modulus_len());
}

bool rsa_verify(const RsaPublicKey& pub, BytesView message, BytesView signature) {
  if (signature.size() != pub.modulus_len()) return false;
  CtxPtr ctx(BN_CTX_new());
  if (!ctx) throw std::runtime_error("BN_CTX_new failed");
  BnPtr n = bn_from_bytes(pub.n);
  BnPtr s = bn_from_bytes(signature);
  if (BN_cmp(s.get(), n.get()) >= 0) return false;
  BnPtr e = make_bn();
  if (!BN_set_word(e.get(), pub.e)) throw std::runtime_error("BN_set_word failed");
  BnPtr m = make_bn();
  if (!BN_mod_exp(m.get(), s.get(), e.get(), n.get(), ctx.get()))
    throw std::runtime_error("BN_mod_exp failed");
  Bytes em = bn_to_bytes(m.get(), pub.modulus_len());
  Bytes expected = emsa_encode(message, pub.modulus_len());
  return em == expected;
}

}  // namespace caliper
