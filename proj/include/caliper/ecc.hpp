#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "caliper/bytes.hpp"

namespace caliper {

/// Shapes the systematic Reed-Solomon encoding of a private key into the
/// fragment grid released by the vault. Keys longer than one RS block are
/// chunked into independent blocks whose symbols interleave across the
/// codeword, so one wrong fragment touches few symbols of any block.
struct CodecParams {
  std::size_t data_len = 0;        // bytes of K_pr
  std::size_t parity_symbols = 0;  // parity bytes per RS block
  std::size_t fragment_len = 0;    // bytes per row fragment
  std::size_t fragment_count = 0;  // M
  std::size_t blocks = 0;          // RS block count, 0 when parity_symbols == 0

  std::size_t codeword_len() const { return fragment_len * fragment_count; }
  std::size_t payload_len() const { return codeword_len() - blocks * parity_symbols; }

  Bytes serialize() const;
  static CodecParams deserialize(BytesView data);
};

/// Derives fragment_len and block count for a key of data_len bytes split
/// over m fragments with the given per-block parity budget.
CodecParams make_codec_params(std::size_t data_len, std::size_t parity_symbols, std::size_t m);

struct FragmentSet {
  std::size_t fragment_len = 0;
  std::vector<Bytes> fragments;   // one slot per row; empty slot == erasure
  std::vector<bool> present;

  std::size_t count() const { return fragments.size(); }
  void erase_slot(std::size_t i) {
    fragments[i].clear();
    present[i] = false;
  }
};

Bytes ecc_encode(BytesView k_pr, const CodecParams& params);

/// Returns the key, or nullopt when corruption exceeds the RS bound.
/// Failure is explicit: an embedded checksum rejects miscorrections, so a
/// wrong key is never returned silently.
std::optional<Bytes> ecc_decode(const FragmentSet& fragments, const CodecParams& params);

/// Byte-wise XOR; self-inverse, doubles as unmask.
Bytes mask(BytesView data, BytesView pad);

FragmentSet partition(BytesView codeword, std::size_t m, std::size_t fragment_len);
Bytes reassemble(const FragmentSet& fragments);

namespace rs {
/// One RS(n, n - nsym) block over GF(2^8), poly 0x11D, fcr = 0.
/// Exposed for the codec's own tests.
Bytes encode_block(BytesView data, std::size_t nsym);
std::optional<Bytes> decode_block(BytesView block, std::size_t nsym,
                                  const std::vector<std::size_t>& erasures);
}  // namespace rs

}  // namespace caliper
