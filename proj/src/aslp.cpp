#include "caliper/aslp.hpp"

#include <algorithm>

namespace caliper {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'A', 'S', 'L', 'P'};
constexpr std::uint8_t kVersion = 1;
const std::string kKeyLabel = "aslp-v1";

}  // namespace

Digest SegmentedImage::checksum() const {
  ByteWriter w;
  for (const auto& seg : segments) w.field(seg);
  return sha256(w.bytes());
}

Bytes pack(const SegmentedImage& image) {
  if (image.segments.empty()) throw FormatError("image needs at least one segment");
  ByteWriter w;
  w.raw(BytesView(kMagic.data(), kMagic.size()));
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(image.segments.size()));
  Digest sum = image.checksum();
  w.raw(BytesView(sum.data(), sum.size()));
  for (const auto& seg : image.segments) w.field(seg);
  return w.take();
}

SegmentedImage parse_container(BytesView data, Digest* header_checksum) {
  try {
    ByteReader r(data);
    Bytes magic = r.raw(kMagic.size());
    if (!std::equal(magic.begin(), magic.end(), kMagic.begin()))
      throw FormatError("not an ASLP container");
    if (r.u8() != kVersion) throw FormatError("unsupported container version");
    std::uint32_t count = r.u32();
    if (count == 0) throw FormatError("empty container");
    Bytes sum = r.raw(kDigestLen);
    if (header_checksum) std::copy(sum.begin(), sum.end(), header_checksum->begin());
    SegmentedImage image;
    image.segments.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) image.segments.push_back(r.field());
    if (!r.done()) throw FormatError("trailing bytes after container");
    return image;
  } catch (const ParseError& e) {
    throw FormatError(std::string("truncated container: ") + e.what());
  }
}

std::vector<std::size_t> permutation_for_key(BytesView key, std::size_t count) {
  if (key.empty()) throw std::invalid_argument("empty personalization key");
  if (count == 0) throw std::invalid_argument("empty permutation");
  ByteWriter w;
  w.raw(key);
  w.raw(to_bytes(kKeyLabel));
  Rng rng(sha256(w.bytes()));

  std::vector<std::size_t> p(count);
  for (std::size_t i = 0; i < count; ++i) p[i] = i;
  for (std::size_t i = count - 1; i > 0; --i)
    std::swap(p[i], p[rng.below(i + 1)]);
  return p;
}

Bytes personalize(BytesView canonical_image, BytesView key) {
  Digest declared{};
  SegmentedImage image = parse_container(canonical_image, &declared);
  if (image.checksum() != declared)
    throw FormatError("input is not in canonical order");

  std::vector<std::size_t> p = permutation_for_key(key, image.segments.size());
  SegmentedImage permuted;
  permuted.segments.resize(image.segments.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    permuted.segments[i] = std::move(image.segments[p[i]]);

  // re-emit with the canonical checksum: the header commits to the original
  // ordering, which only the key can restore
  ByteWriter w;
  w.raw(BytesView(kMagic.data(), kMagic.size()));
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(permuted.segments.size()));
  w.raw(BytesView(declared.data(), declared.size()));
  for (const auto& seg : permuted.segments) w.field(seg);
  return w.take();
}

SegmentedImage load(BytesView permuted_image, BytesView key) {
  Digest declared{};
  SegmentedImage permuted = parse_container(permuted_image, &declared);

  std::vector<std::size_t> p = permutation_for_key(key, permuted.segments.size());
  SegmentedImage canonical;
  canonical.segments.resize(permuted.segments.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    canonical.segments[p[i]] = std::move(permuted.segments[i]);

  if (canonical.checksum() != declared)
    throw LoadFailure("checksum mismatch: wrong key or corrupted image");
  return canonical;
}

Bytes redeploy(BytesView canonical_image, BytesView new_key) {
  return personalize(canonical_image, new_key);
}

}  // namespace caliper
