#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "caliper/bytes.hpp"
#include "caliper/crypto.hpp"

namespace caliper {

// Canonical encodings double as the on-disk and on-wire table format:
// format version byte, fields in declared order as 4-byte big-endian
// length prefix + raw bytes, rows in ascending key order (positional for
// the server table).
inline constexpr std::uint8_t kTableFormatVersion = 1;

struct ModelEntry {
  Digest h1{};
  Bytes model_blob;

  Bytes canonical_encode() const;
};

struct ModelTable {
  std::map<Digest, ModelEntry> entries;

  Bytes canonical_encode() const;
  static ModelTable canonical_decode(BytesView data);
};

struct ClientRow {
  Digest h1{};
  std::uint8_t choice_index = 0;
  Bytes khat_fragment;
  std::uint8_t mid = 0;

  Bytes canonical_encode() const;
  static ClientRow canonical_decode(BytesView data);
};

struct ClientTable {
  std::map<Digest, ClientRow> rows;

  Bytes canonical_encode() const;
  static ClientTable canonical_decode(BytesView data);
};

struct ServerEntry {
  Digest h2{};
  std::uint8_t choice_index = 0;
  Bytes pad_fragment;

  Bytes canonical_encode() const;
  static ServerEntry canonical_decode(BytesView data);
};

struct ServerTable {
  std::vector<std::vector<ServerEntry>> rows;  // M rows of N entries

  std::size_t row_count() const { return rows.size(); }
  std::size_t choices() const { return rows.empty() ? 0 : rows[0].size(); }
  Bytes canonical_encode() const;
  static ServerTable canonical_decode(BytesView data);
};

/// Everything secret that exists only during enrollment. Wiped by the
/// protocol layer once the tables are built and sealed.
struct KeyMaterial {
  Bytes k_pu;      // serialized public key
  Bytes k_pr;      // raw private key bytes
  Bytes codeword;  // C(K_pr)
  Bytes pad;       // R, same length as codeword
  Bytes masked;    // K-hat = codeword XOR pad

  void wipe();
};

struct UserContext {
  std::string uid;
  Digest uid_digest{};

  static UserContext from_uid(const std::string& uid);
};

Digest hash_model(BytesView model_blob);
Digest hash_client_row(const ClientRow& row);

/// One vault row: a real model, its chaff peers, and the modality tag.
struct RowSpec {
  Bytes real_model_blob;
  std::vector<Bytes> chaff_model_blobs;  // N-1 of them
  std::uint8_t mid = 0;
};

struct VaultTables {
  ModelTable model_table;
  ClientTable client_table;
  ServerTable server_table;
  std::size_t fragment_len = 0;
  /// CAS-local index assigning each client row to its fragment slot.
  /// Covers real and chaff rows alike, so it reveals no ground truth.
  std::map<Digest, std::size_t> fragment_slot;
  /// Real column per row; populated only when build_tables is called with
  /// the insecure test hook, otherwise discarded during construction.
  std::optional<std::vector<std::size_t>> real_columns_for_test;
};

VaultTables build_tables(const std::vector<RowSpec>& ensemble, const KeyMaterial& key_material,
                         Rng& rng, bool insecure_keep_ground_truth = false);

}  // namespace caliper
