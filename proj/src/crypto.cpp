#include "caliper/crypto.hpp"

#include <sodium.h>
#include <zlib.h>

#include <cstring>
#include <stdexcept>

namespace caliper {

namespace {
struct SodiumInit {
  SodiumInit() {
    if (sodium_init() < 0) throw std::runtime_error("libsodium init failed");
  }
};
const SodiumInit g_sodium_init;
}  // namespace

Digest sha256(BytesView data) {
  Digest d;
  crypto_hash_sha256(d.data(), data.data(), data.size());
  return d;
}

Bytes sha256_bytes(BytesView data) {
  Digest d = sha256(data);
  return Bytes(d.begin(), d.end());
}

std::uint32_t crc32(BytesView data) {
  return static_cast<std::uint32_t>(::crc32(0L, data.data(), static_cast<uInt>(data.size())));
}

void secure_wipe(Bytes& b) {
  if (!b.empty()) sodium_memzero(b.data(), b.size());
  b.clear();
}

void secure_wipe(void* p, std::size_t n) {
  if (n) sodium_memzero(p, n);
}

Rng::Rng() {
  randombytes_buf(key_.data(), key_.size());
  buf_pos_ = buf_.size();
}

Rng::Rng(std::uint64_t seed) {
  std::uint8_t tmp[8];
  for (int i = 0; i < 8; ++i) tmp[i] = static_cast<std::uint8_t>(seed >> (8 * i));
  crypto_hash_sha256(key_.data(), tmp, sizeof(tmp));
  buf_pos_ = buf_.size();
}

Rng::Rng(const std::array<std::uint8_t, 32>& seed) : key_(seed) {
  buf_pos_ = buf_.size();
}

void Rng::refill() {
  std::uint8_t nonce[crypto_stream_chacha20_NONCEBYTES] = {0};
  for (int i = 0; i < 8; ++i) nonce[i] = static_cast<std::uint8_t>(counter_ >> (8 * i));
  ++counter_;
  std::memset(buf_.data(), 0, buf_.size());
  crypto_stream_chacha20_xor(buf_.data(), buf_.data(), buf_.size(), nonce, key_.data());
  buf_pos_ = 0;
}

void Rng::fill(std::uint8_t* out, std::size_t n) {
  while (n > 0) {
    if (buf_pos_ == buf_.size()) refill();
    std::size_t take = std::min(n, buf_.size() - buf_pos_);
    std::memcpy(out, buf_.data() + buf_pos_, take);
    buf_pos_ += take;
    out += take;
    n -= take;
  }
}

Bytes Rng::bytes(std::size_t n) {
  Bytes out(n);
  fill(out.data(), n);
  return out;
}

std::uint64_t Rng::next_u64() {
  std::uint8_t tmp[8];
  fill(tmp, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(tmp[i]) << (8 * i);
  return v;
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::below: zero bound");
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

double Rng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

Rng Rng::fork(const std::string& label) {
  Bytes material(key_.begin(), key_.end());
  std::uint8_t ctr[8];
  fill(ctr, 8);
  material.insert(material.end(), ctr, ctr + 8);
  Bytes lbl = to_bytes(label);
  material.insert(material.end(), lbl.begin(), lbl.end());
  std::array<std::uint8_t, 32> seed;
  crypto_hash_sha256(seed.data(), material.data(), material.size());
  secure_wipe(material);
  return Rng(seed);
}

}  // namespace caliper
