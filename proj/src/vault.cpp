#include "caliper/vault.hpp"

#include <stdexcept>

#include "caliper/ecc.hpp"

namespace caliper {

namespace {

Digest digest_field(ByteReader& r) {
  Bytes b = r.field();
  if (b.size() != kDigestLen) throw ParseError("bad digest length");
  Digest d;
  std::copy(b.begin(), b.end(), d.begin());
  return d;
}

void check_version(ByteReader& r) {
  if (r.u8() != kTableFormatVersion) throw ParseError("unsupported table format version");
}

}  // namespace

Bytes ModelEntry::canonical_encode() const {
  ByteWriter w;
  w.u8(kTableFormatVersion);
  w.field(BytesView(h1));
  w.field(model_blob);
  return w.take();
}

Bytes ModelTable::canonical_encode() const {
  ByteWriter w;
  w.u8(kTableFormatVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [h1, entry] : entries) w.field(entry.canonical_encode());
  return w.take();
}

ModelTable ModelTable::canonical_decode(BytesView data) {
  ByteReader r(data);
  check_version(r);
  std::uint32_t count = r.u32();
  ModelTable t;
  for (std::uint32_t i = 0; i < count; ++i) {
    Bytes enc = r.field();
    ByteReader er(enc);
    check_version(er);
    ModelEntry e;
    e.h1 = digest_field(er);
    e.model_blob = er.field();
    if (!er.done()) throw ParseError("trailing bytes in model entry");
    if (hash_model(e.model_blob) != e.h1) throw ParseError("model entry h1 mismatch");
    t.entries.emplace(e.h1, std::move(e));
  }
  if (!r.done()) throw ParseError("trailing bytes in model table");
  return t;
}

Bytes ClientRow::canonical_encode() const {
  ByteWriter w;
  w.u8(kTableFormatVersion);
  w.field(BytesView(h1));
  Bytes idx = {choice_index};
  w.field(idx);
  w.field(khat_fragment);
  Bytes m = {mid};
  w.field(m);
  return w.take();
}

ClientRow ClientRow::canonical_decode(BytesView data) {
  ByteReader r(data);
  check_version(r);
  ClientRow row;
  row.h1 = digest_field(r);
  Bytes idx = r.field();
  if (idx.size() != 1) throw ParseError("bad choice index");
  row.choice_index = idx[0];
  row.khat_fragment = r.field();
  Bytes m = r.field();
  if (m.size() != 1) throw ParseError("bad mid");
  row.mid = m[0];
  if (!r.done()) throw ParseError("trailing bytes in client row");
  return row;
}

Bytes ClientTable::canonical_encode() const {
  ByteWriter w;
  w.u8(kTableFormatVersion);
  w.u32(static_cast<std::uint32_t>(rows.size()));
  for (const auto& [h2, row] : rows) w.field(row.canonical_encode());
  return w.take();
}

ClientTable ClientTable::canonical_decode(BytesView data) {
  ByteReader r(data);
  check_version(r);
  std::uint32_t count = r.u32();
  ClientTable t;
  for (std::uint32_t i = 0; i < count; ++i) {
    Bytes enc = r.field();
    ClientRow row = ClientRow::canonical_decode(enc);
    t.rows.emplace(hash_client_row(row), std::move(row));
  }
  if (!r.done()) throw ParseError("trailing bytes in client table");
  return t;
}

Bytes ServerEntry::canonical_encode() const {
  ByteWriter w;
  w.u8(kTableFormatVersion);
  w.field(BytesView(h2));
  Bytes idx = {choice_index};
  w.field(idx);
  w.field(pad_fragment);
  return w.take();
}

ServerEntry ServerEntry::canonical_decode(BytesView data) {
  ByteReader r(data);
  check_version(r);
  ServerEntry e;
  e.h2 = digest_field(r);
  Bytes idx = r.field();
  if (idx.size() != 1) throw ParseError("bad choice index");
  e.choice_index = idx[0];
  e.pad_fragment = r.field();
  if (!r.done()) throw ParseError("trailing bytes in server entry");
  return e;
}

Bytes ServerTable::canonical_encode() const {
  ByteWriter w;
  w.u8(kTableFormatVersion);
  w.u32(static_cast<std::uint32_t>(rows.size()));
  w.u32(static_cast<std::uint32_t>(choices()));
  for (const auto& row : rows) {
    for (const auto& e : row) w.field(e.canonical_encode());
  }
  return w.take();
}

ServerTable ServerTable::canonical_decode(BytesView data) {
  ByteReader r(data);
  check_version(r);
  std::uint32_t m = r.u32();
  std::uint32_t n = r.u32();
  ServerTable t;
  t.rows.resize(m);
  for (std::uint32_t i = 0; i < m; ++i) {
    t.rows[i].resize(n);
    for (std::uint32_t j = 0; j < n; ++j) t.rows[i][j] = ServerEntry::canonical_decode(r.field());
  }
  if (!r.done()) throw ParseError("trailing bytes in server table");
  return t;
}

void KeyMaterial::wipe() {
  secure_wipe(k_pr);
  secure_wipe(codeword);
  secure_wipe(pad);
  secure_wipe(masked);
}

UserContext UserContext::from_uid(const std::string& uid) {
  UserContext ctx;
  ctx.uid = uid;
  ctx.uid_digest = sha256(to_bytes(uid));
  return ctx;
}

Digest hash_model(BytesView model_blob) {
  if (model_blob.empty()) throw std::invalid_argument("hash_model: empty model blob");
  return sha256(model_blob);
}

Digest hash_client_row(const ClientRow& row) {
  return sha256(row.canonical_encode());
}

VaultTables build_tables(const std::vector<RowSpec>& ensemble, const KeyMaterial& key_material,
                         Rng& rng, bool insecure_keep_ground_truth) {
  const std::size_t m = ensemble.size();
  if (m == 0) throw std::invalid_argument("build_tables: empty ensemble");
  const std::size_t n = 1 + ensemble[0].chaff_model_blobs.size();
  if (n < 2) throw std::invalid_argument("build_tables: need at least 2 choices per row");
  for (const auto& spec : ensemble) {
    if (1 + spec.chaff_model_blobs.size() != n)
      throw std::invalid_argument("build_tables: ragged choice counts");
  }
  if (key_material.masked.size() != key_material.pad.size())
    throw std::invalid_argument("build_tables: pad/masked length mismatch");

  const std::size_t fragment_len = (key_material.masked.size() + m - 1) / m;
  if (m * fragment_len < key_material.masked.size())
    throw std::invalid_argument("build_tables: fragments cannot cover the masked key");

  FragmentSet khat_frags = partition(key_material.masked, m, fragment_len);
  FragmentSet pad_frags = partition(key_material.pad, m, fragment_len);

  VaultTables out;
  out.fragment_len = fragment_len;
  std::vector<std::size_t> real_columns(m);

  for (std::size_t row = 0; row < m; ++row) {
    const RowSpec& spec = ensemble[row];
    const std::size_t real_col = rng.below(n);
    real_columns[row] = real_col;

    std::vector<ServerEntry> server_row(n);
    std::size_t chaff_cursor = 0;
    for (std::size_t col = 0; col < n; ++col) {
      const bool is_real = col == real_col;
      const Bytes& blob =
          is_real ? spec.real_model_blob : spec.chaff_model_blobs[chaff_cursor++];
      Digest h1 = hash_model(blob);
      out.model_table.entries.emplace(h1, ModelEntry{h1, blob});

      ClientRow crow;
      crow.h1 = h1;
      crow.choice_index = static_cast<std::uint8_t>(col);
      crow.khat_fragment = is_real ? khat_frags.fragments[row] : rng.bytes(fragment_len);
      crow.mid = spec.mid;
      Digest h2 = hash_client_row(crow);
      out.client_table.rows.emplace(h2, crow);
      out.fragment_slot.emplace(h2, row);

      ServerEntry entry;
      entry.h2 = h2;
      entry.choice_index = static_cast<std::uint8_t>(col);
      entry.pad_fragment = is_real ? pad_frags.fragments[row] : rng.bytes(fragment_len);
      server_row[col] = std::move(entry);
    }
    out.server_table.rows.push_back(std::move(server_row));
  }

  if (insecure_keep_ground_truth) {
    out.real_columns_for_test = std::move(real_columns);
  } else {
    secure_wipe(real_columns.data(), real_columns.size() * sizeof(std::size_t));
  }
  return out;
}

}  // namespace caliper
