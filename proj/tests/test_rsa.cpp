#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "caliper/rsa.hpp"

using namespace caliper;

TEST_CASE("keygen is deterministic under a fixed seed") {
  Rng a(42), b(42);
  auto k1 = rsa_generate(1024, a);
  auto k2 = rsa_generate(1024, b);
  CHECK(k1.pub.n == k2.pub.n);
  CHECK(k1.d == k2.d);

  Rng c(43);
  auto k3 = rsa_generate(1024, c);
  CHECK(k1.pub.n != k3.pub.n);
}

TEST_CASE("sign and verify round trip") {
  Rng rng(7);
  auto kp = rsa_generate(2048, rng);
  CHECK(kp.pub.modulus_len() == 256);
  CHECK(kp.d.size() == 256);

  Bytes msg = to_bytes("challenge transcript");
  Bytes sig = rsa_sign(kp.d, kp.pub, msg);
  CHECK(sig.size() == 256);
  CHECK(rsa_verify(kp.pub, msg, sig));

  Bytes other = to_bytes("challenge transcripT");
  CHECK_FALSE(rsa_verify(kp.pub, other, sig));

  Bytes bad = sig;
  bad[100] ^= 1;
  CHECK_FALSE(rsa_verify(kp.pub, msg, bad));

  auto kp2 = rsa_generate(2048, rng);
  CHECK_FALSE(rsa_verify(kp2.pub, msg, sig));
}

TEST_CASE("public key serialization round trips") {
  Rng rng(9);
  auto kp = rsa_generate(1024, rng);
  auto back = RsaPublicKey::deserialize(kp.pub.serialize());
  CHECK(back == kp.pub);
}

TEST_CASE("a recovered d byte string signs identically to the original") {
  Rng rng(11);
  auto kp = rsa_generate(1024, rng);
  Bytes copy = kp.d;  // what the vault releases
  Bytes msg = to_bytes("m");
  CHECK(rsa_sign(copy, kp.pub, msg) == rsa_sign(kp.d, kp.pub, msg));
}
