#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "caliper/bytes.hpp"
#include "caliper/crypto.hpp"

namespace caliper {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LoadFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Toy program image: opaque segments in canonical order. The container
/// header commits to the canonical ordering via a checksum; a permuted
/// container carries no per-segment index, so only the key reorders it.
struct SegmentedImage {
  std::vector<Bytes> segments;

  /// sha256 over the length-framed concatenation in the stored order.
  Digest checksum() const;
};

/// Serializes a canonical image into the container format:
/// magic "ASLP", version, segment count, canonical checksum, segments.
Bytes pack(const SegmentedImage& image);

/// Parses a container without validating the checksum (load does that).
/// Throws FormatError on bad magic, version, or truncation.
SegmentedImage parse_container(BytesView data, Digest* header_checksum = nullptr);

/// Segment permutation derived from the personalization key:
/// seed = digest(key || "aslp-v1"), seeded Fisher-Yates over S slots.
std::vector<std::size_t> permutation_for_key(BytesView key, std::size_t count);

/// Reorders a canonical container's segments under the key. The header
/// checksum still names the canonical ordering.
Bytes personalize(BytesView canonical_image, BytesView key);

/// Inverts the key's permutation and verifies the checksum; a wrong key or
/// corrupted segment yields LoadFailure with no partial output.
SegmentedImage load(BytesView permuted_image, BytesView key);

/// Re-personalizes under a fresh key; the old key no longer loads it.
Bytes redeploy(BytesView canonical_image, BytesView new_key);

}  // namespace caliper
