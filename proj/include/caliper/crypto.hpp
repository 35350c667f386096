#pragma once

#include <array>
#include <cstdint>

#include "caliper/bytes.hpp"

namespace caliper {

inline constexpr std::size_t kDigestLen = 32;
using Digest = std::array<std::uint8_t, kDigestLen>;

Digest sha256(BytesView data);
Bytes sha256_bytes(BytesView data);

std::uint32_t crc32(BytesView data);

void secure_wipe(Bytes& b);
void secure_wipe(void* p, std::size_t n);

/// Deterministic ChaCha20-based random stream. Every source of randomness
/// in the system draws from one of these so that a fixed master seed
/// reproduces a run byte for byte. Seeded from the OS when no seed is given.
class Rng {
 public:
  Rng();  // system entropy
  explicit Rng(std::uint64_t seed);
  explicit Rng(const std::array<std::uint8_t, 32>& seed);

  void fill(std::uint8_t* out, std::size_t n);
  Bytes bytes(std::size_t n);
  std::uint64_t next_u64();
  /// Uniform in [0, bound), bound > 0, rejection-sampled.
  std::uint64_t below(std::uint64_t bound);
  double uniform01();

  /// Independent child stream, derived from this stream's state and a label.
  Rng fork(const std::string& label);

 private:
  std::array<std::uint8_t, 32> key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint8_t, 64> buf_;
  std::size_t buf_pos_;
  void refill();
};

}  // namespace caliper
