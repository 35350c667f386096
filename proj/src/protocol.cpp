#include "caliper/protocol.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace caliper {

namespace {

constexpr std::uint8_t kProtocolVersion = 1;

void write_nonce(ByteWriter& w, const Nonce& n) {
  w.raw(BytesView(n.data(), n.size()));
}

Nonce read_nonce(ByteReader& r) {
  Bytes raw = r.raw(kNonceLen);
  Nonce n{};
  std::copy(raw.begin(), raw.end(), n.begin());
  return n;
}

void write_digest(ByteWriter& w, const Digest& d) {
  w.raw(BytesView(d.data(), d.size()));
}

Digest read_digest(ByteReader& r) {
  Bytes raw = r.raw(kDigestLen);
  Digest d{};
  std::copy(raw.begin(), raw.end(), d.begin());
  return d;
}

void write_key32(ByteWriter& w, const std::array<std::uint8_t, 32>& k) {
  w.raw(BytesView(k.data(), k.size()));
}

std::array<std::uint8_t, 32> read_key32(ByteReader& r) {
  Bytes raw = r.raw(32);
  std::array<std::uint8_t, 32> k{};
  std::copy(raw.begin(), raw.end(), k.begin());
  return k;
}

void check_version(std::uint8_t v) {
  if (v != kProtocolVersion) throw ParseError("unsupported protocol format version");
}

}  // namespace

// ---------------------------------------------------------- wire payloads

Bytes Challenge::serialize() const {
  ByteWriter w;
  w.u8(kProtocolVersion);
  write_nonce(w, challenge_id);
  w.u32(static_cast<std::uint32_t>(rows.size()));
  w.u32(rows.empty() ? 0 : static_cast<std::uint32_t>(rows[0].size()));
  for (const auto& row : rows) {
    if (row.size() != rows[0].size()) throw ParseError("ragged challenge rows");
    for (const auto& entry : row) {
      write_digest(w, entry.h2);
      w.field(entry.pad_fragment);
    }
  }
  write_nonce(w, n2);
  return w.take();
}

Challenge Challenge::deserialize(BytesView data) {
  ByteReader r(data);
  check_version(r.u8());
  Challenge c;
  c.challenge_id = read_nonce(r);
  std::uint32_t count = r.u32();
  std::uint32_t width = r.u32();
  c.rows.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::vector<ChallengeRowEntry> row(width);
    for (std::uint32_t j = 0; j < width; ++j) {
      row[j].h2 = read_digest(r);
      row[j].pad_fragment = r.field();
    }
    c.rows.push_back(std::move(row));
  }
  c.n2 = read_nonce(r);
  if (!r.done()) throw ParseError("trailing bytes after challenge");
  return c;
}

Bytes PermKey::encode() const {
  ByteWriter w;
  w.u8(kProtocolVersion);
  w.field(BytesView(shifts.data(), shifts.size()));
  return w.take();
}

Bytes Response::serialize() const {
  ByteWriter w;
  w.u8(kProtocolVersion);
  write_nonce(w, challenge_id);
  write_nonce(w, n2);
  w.u8(static_cast<std::uint8_t>(status));
  w.field(signature);
  w.u8(guess_vector ? 1 : 0);
  if (guess_vector) w.field(BytesView(guess_vector->data(), guess_vector->size()));
  return w.take();
}

Response Response::deserialize(BytesView data) {
  ByteReader r(data);
  check_version(r.u8());
  Response resp;
  resp.challenge_id = read_nonce(r);
  resp.n2 = read_nonce(r);
  std::uint8_t status = r.u8();
  if (status > 1) throw ParseError("bad response status");
  resp.status = static_cast<ResponseStatus>(status);
  resp.signature = r.field();
  if (r.u8() != 0) {
    Bytes g = r.field();
    resp.guess_vector = std::vector<std::uint8_t>(g.begin(), g.end());
  }
  if (!r.done()) throw ParseError("trailing bytes after response");
  return resp;
}

const char* reject_reason_name(RejectReason reason) {
  switch (reason) {
    case RejectReason::None: return "None";
    case RejectReason::Replay: return "Replay";
    case RejectReason::BadSignature: return "BadSignature";
    case RejectReason::TamperDetected: return "TamperDetected";
    case RejectReason::KeyConsumed: return "KeyConsumed";
    case RejectReason::RotationExhausted: return "RotationExhausted";
    case RejectReason::NoSession: return "NoSession";
    case RejectReason::DecodeFailure: return "DecodeFailure";
    case RejectReason::IntrusionFlag: return "IntrusionFlag";
    case RejectReason::BudgetExceeded: return "BudgetExceeded";
    case RejectReason::DuplicateEnrollment: return "DuplicateEnrollment";
    case RejectReason::BadRequest: return "BadRequest";
  }
  return "Unknown";
}

Bytes Verdict::serialize() const {
  ByteWriter w;
  w.u8(kProtocolVersion);
  w.u8(accept ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(reason));
  return w.take();
}

Verdict Verdict::deserialize(BytesView data) {
  ByteReader r(data);
  check_version(r.u8());
  Verdict v;
  v.accept = r.u8() != 0;
  v.reason = static_cast<RejectReason>(r.u8());
  if (!r.done()) throw ParseError("trailing bytes after verdict");
  return v;
}

Bytes EnrollRequestPayload::serialize() const {
  ByteWriter w;
  w.u8(kProtocolVersion);
  w.field(server_table);
  w.field(k_pu);
  write_digest(w, uid_digest);
  write_nonce(w, n1);
  write_key32(w, reply_pk);
  return w.take();
}

EnrollRequestPayload EnrollRequestPayload::deserialize(BytesView data) {
  ByteReader r(data);
  check_version(r.u8());
  EnrollRequestPayload p;
  p.server_table = r.field();
  p.k_pu = r.field();
  p.uid_digest = read_digest(r);
  p.n1 = read_nonce(r);
  p.reply_pk = read_key32(r);
  if (!r.done()) throw ParseError("trailing bytes after enroll request");
  return p;
}

Bytes EnrollReceiptPayload::serialize() const {
  ByteWriter w;
  w.u8(kProtocolVersion);
  w.field(sealed_blob);
  write_nonce(w, n1);
  return w.take();
}

EnrollReceiptPayload EnrollReceiptPayload::deserialize(BytesView data) {
  ByteReader r(data);
  check_version(r.u8());
  EnrollReceiptPayload p;
  p.sealed_blob = r.field();
  p.n1 = read_nonce(r);
  if (!r.done()) throw ParseError("trailing bytes after enroll receipt");
  return p;
}

Bytes AccessRequestPayload::serialize() const {
  ByteWriter w;
  w.u8(kProtocolVersion);
  write_digest(w, uid_digest);
  w.field(sealed_blob);
  write_key32(w, reply_pk);
  return w.take();
}

AccessRequestPayload AccessRequestPayload::deserialize(BytesView data) {
  ByteReader r(data);
  check_version(r.u8());
  AccessRequestPayload p;
  p.uid_digest = read_digest(r);
  p.sealed_blob = r.field();
  p.reply_pk = read_key32(r);
  if (!r.done()) throw ParseError("trailing bytes after access request");
  return p;
}

Bytes encode_sealed_blob_plaintext(const Bytes& server_table, const Nonce& n1) {
  ByteWriter w;
  w.u8(kProtocolVersion);
  w.field(server_table);
  write_nonce(w, n1);
  return w.take();
}

void decode_sealed_blob_plaintext(BytesView data, Bytes& server_table, Nonce& n1) {
  ByteReader r(data);
  check_version(r.u8());
  server_table = r.field();
  n1 = read_nonce(r);
  if (!r.done()) throw ParseError("trailing bytes after sealed blob");
}

Message make_error_message(RejectReason reason, const std::string& detail) {
  ByteWriter w;
  w.u8(kProtocolVersion);
  w.u8(static_cast<std::uint8_t>(reason));
  w.field(detail);
  return Message{MessageType::Error, w.take()};
}

std::pair<RejectReason, std::string> parse_error_message(const Message& message) {
  if (message.type != MessageType::Error) throw ProtocolError("not an error message");
  ByteReader r(message.payload);
  check_version(r.u8());
  auto reason = static_cast<RejectReason>(r.u8());
  std::string detail = to_string(r.field());
  return {reason, detail};
}

// ------------------------------------------------------------------ policy

PolicyState update_policy(const PolicyState& state, const PolicyConfig& config,
                          std::size_t table_rows, std::size_t guesses_correct,
                          std::size_t guesses_total) {
  if (guesses_correct > guesses_total) throw std::invalid_argument("guesses_correct > guesses_total");
  PolicyState out = state;
  if (guesses_total > 0) {
    double ratio = static_cast<double>(guesses_correct) / static_cast<double>(guesses_total);
    if (ratio >= config.raise_threshold) {
      out.interval_next = std::min(state.interval_next * 2, config.interval_max);
      out.challenge_rows_next = std::max(config.min_rows, (state.challenge_rows_next + 1) / 2);
    } else if (ratio < config.drop_threshold) {
      out.interval_next = config.interval_min;
      out.challenge_rows_next = table_rows;
    }
  }
  out.interval_next = std::clamp(out.interval_next, config.interval_min, config.interval_max);
  out.challenge_rows_next =
      std::clamp(out.challenge_rows_next, std::min(config.min_rows, table_rows), table_rows);
  return out;
}

// -------------------------------------------------------------- challenges

namespace {

ChallengeSession build_challenge(const EnrollmentRecord& record, const Bytes& sealed_blob,
                                 const BoxKeyPair& cave_keys, Rng& rng, NonceRegistry& nonces,
                                 std::uint64_t now, bool decoy) {
  if (record.consumed) throw KeyConsumed("enrollment record already consumed");
  if (sha256(sealed_blob) != record.stored_hash)
    throw TamperDetected("sealed table blob does not match stored hash");

  Bytes table_bytes;
  Nonce n1{};
  try {
    Envelope env = Envelope::deserialize(sealed_blob);
    decode_sealed_blob_plaintext(open(cave_keys, env), table_bytes, n1);
  } catch (const OpenFailure&) {
    throw TamperDetected("sealed table blob does not open under the verifier key");
  } catch (const ParseError&) {
    throw TamperDetected("sealed table blob is malformed");
  }
  ServerTable table = ServerTable::canonical_decode(table_bytes);
  const std::size_t m = table.row_count();
  const std::size_t n = table.choices();
  if (m == 0 || n == 0) throw ProtocolError("empty server table");

  std::size_t want = record.policy.challenge_rows_next == 0 ? m : record.policy.challenge_rows_next;
  want = std::min(want, m);

  // Partial Fisher-Yates: the first `want` entries are a uniform random
  // subset in uniform random order.
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < want; ++i)
    std::swap(order[i], order[i + rng.below(m - i)]);

  ChallengeSession session;
  session.record_hash = record.stored_hash;
  session.decoy = decoy;
  session.table_rows = m;
  session.challenge.challenge_id = nonces.issue(rng, now);
  for (std::size_t i = 0; i < want; ++i) {
    const auto& src = table.rows[order[i]];
    std::size_t shift = rng.below(n);
    std::vector<ChallengeRowEntry> out(n);
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t p = (c + shift) % n;
      out[p].h2 = src[c].h2;
      out[p].pad_fragment = decoy ? rng.bytes(src[c].pad_fragment.size()) : src[c].pad_fragment;
    }
    session.challenge.rows.push_back(std::move(out));
    session.perm.shifts.push_back(static_cast<std::uint8_t>(shift));
  }
  session.challenge.n2 = nonces.issue(rng, now);
  return session;
}

}  // namespace

ChallengeSession make_challenge(const EnrollmentRecord& record, const Bytes& sealed_blob,
                                const BoxKeyPair& cave_keys, Rng& rng, NonceRegistry& nonces,
                                std::uint64_t now) {
  return build_challenge(record, sealed_blob, cave_keys, rng, nonces, now, false);
}

ChallengeSession make_decoy_challenge(const EnrollmentRecord& record, const Bytes& sealed_blob,
                                      const BoxKeyPair& cave_keys, Rng& rng, NonceRegistry& nonces,
                                      std::uint64_t now) {
  return build_challenge(record, sealed_blob, cave_keys, rng, nonces, now, true);
}

// -------------------------------------------------------------- CAS vault

Bytes CasVault::serialize() const {
  ByteWriter w;
  w.u8(kProtocolVersion);
  w.field(model_table.canonical_encode());
  w.field(client_table.canonical_encode());
  w.u32(static_cast<std::uint32_t>(fragment_slot.size()));
  for (const auto& [h2, slot] : fragment_slot) {
    write_digest(w, h2);
    w.u32(static_cast<std::uint32_t>(slot));
  }
  w.field(codec.serialize());
  w.field(k_pu);
  write_digest(w, uid_digest);
  w.field(sealed_blob);
  return w.take();
}

CasVault CasVault::deserialize(BytesView data) {
  ByteReader r(data);
  check_version(r.u8());
  CasVault v;
  v.model_table = ModelTable::canonical_decode(r.field());
  v.client_table = ClientTable::canonical_decode(r.field());
  std::uint32_t slots = r.u32();
  for (std::uint32_t i = 0; i < slots; ++i) {
    Digest h2 = read_digest(r);
    std::uint32_t slot = r.u32();
    v.fragment_slot.emplace(h2, slot);
  }
  v.codec = CodecParams::deserialize(r.field());
  v.k_pu = r.field();
  v.uid_digest = read_digest(r);
  v.sealed_blob = r.field();
  if (!r.done()) throw ParseError("trailing bytes after vault");
  return v;
}

// -------------------------------------------------------------- enrollment

CasVault enroll_cas(const UserContext& user, const std::vector<RowSpec>& ensemble,
                    const CodecParams& codec, std::size_t key_bits,
                    const std::array<std::uint8_t, 32>& cave_pk, const BoxKeyPair& cas_keys,
                    Channel& channel, Rng& rng, SecretCapture* capture) {
  RsaKeyPair keys = rsa_generate(key_bits, rng);
  KeyMaterial km;
  km.k_pu = keys.pub.serialize();
  km.k_pr = keys.d;
  if (km.k_pr.size() != codec.data_len)
    throw ProtocolError("codec parameters sized for a different key length");
  km.codeword = ecc_encode(km.k_pr, codec);
  km.pad = rng.bytes(km.codeword.size());
  km.masked = mask(km.codeword, km.pad);

  VaultTables tables = build_tables(ensemble, km, rng);
  if (tables.fragment_len != codec.fragment_len)
    throw ProtocolError("ensemble row count disagrees with codec fragment length");

  if (capture) {
    capture->k_pr = km.k_pr;
    capture->pad = km.pad;
    capture->codeword = km.codeword;
  }

  Nonce n1{};
  rng.fill(n1.data(), n1.size());

  EnrollRequestPayload request;
  request.server_table = tables.server_table.canonical_encode();
  request.k_pu = km.k_pu;
  request.uid_digest = user.uid_digest;
  request.n1 = n1;
  request.reply_pk = cas_keys.pk;

  channel.send(Message{MessageType::EnrollRequest, seal(cave_pk, request.serialize(), rng).serialize()});

  std::optional<Message> reply = channel.recv();
  if (!reply) throw ProtocolError("channel closed during enrollment");
  if (reply->type == MessageType::Error) {
    auto [reason, detail] = parse_error_message(*reply);
    throw ProtocolError(std::string("enrollment rejected: ") + reject_reason_name(reason) +
                        (detail.empty() ? "" : ": " + detail));
  }
  if (reply->type != MessageType::EnrollReceipt)
    throw ProtocolError("unexpected message during enrollment");

  Envelope receipt_env = Envelope::deserialize(reply->payload);
  EnrollReceiptPayload receipt = EnrollReceiptPayload::deserialize(open(cas_keys, receipt_env));
  if (receipt.n1 != n1) throw ProtocolError("enrollment receipt echoes the wrong nonce");

  km.wipe();
  secure_wipe(keys.d);

  CasVault vault;
  vault.model_table = std::move(tables.model_table);
  vault.client_table = std::move(tables.client_table);
  vault.fragment_slot = std::move(tables.fragment_slot);
  vault.codec = codec;
  vault.k_pu = keys.pub.serialize();
  vault.uid_digest = user.uid_digest;
  vault.sealed_blob = std::move(receipt.sealed_blob);
  return vault;
}

EnrollOutcome enroll_cave(const Message& request, const BoxKeyPair& cave_keys,
                          const PolicyConfig& policy_defaults, std::size_t default_rows,
                          Rng& rng) {
  if (request.type != MessageType::EnrollRequest)
    throw ProtocolError("not an enrollment request");
  Envelope env = Envelope::deserialize(request.payload);
  EnrollRequestPayload req = EnrollRequestPayload::deserialize(open(cave_keys, env));

  ServerTable table = ServerTable::canonical_decode(req.server_table);
  if (table.row_count() == 0 || table.choices() == 0)
    throw ProtocolError("enrollment carries an empty server table");
  RsaPublicKey::deserialize(req.k_pu);  // shape check only

  // The table lives on in sealed form only; the record keeps its hash so a
  // substituted or blended blob is caught before any challenge is built.
  Bytes blob = seal(cave_keys.pk, encode_sealed_blob_plaintext(req.server_table, req.n1), rng)
                   .serialize();

  EnrollOutcome out;
  out.record.uid_digest = req.uid_digest;
  out.record.k_pu = req.k_pu;
  out.record.stored_hash = sha256(blob);
  out.record.policy.challenge_rows_next = std::min(default_rows, table.row_count());
  out.record.policy.interval_next = policy_defaults.interval_min;
  out.record.policy.failure_streak = 0;
  out.record.consumed = false;

  EnrollReceiptPayload receipt{std::move(blob), req.n1};
  out.receipt = Message{MessageType::EnrollReceipt,
                        seal(req.reply_pk, receipt.serialize(), rng).serialize()};
  return out;
}

// ------------------------------------------------------------ verification

Bytes response_signing_digest(const PermKey& perm, const Nonce& n2) {
  ByteWriter w;
  w.field(perm.encode());
  w.field(BytesView(n2.data(), n2.size()));
  return sha256_bytes(w.bytes());
}

Response answer_challenge(const Challenge& challenge, const CasVault& vault,
                          const LiveData& live, Bytes* recovered_key_digest) {
  const CodecParams& codec = vault.codec;
  FragmentSet set;
  set.fragment_len = codec.fragment_len;
  set.fragments.resize(codec.fragment_count);
  set.present.assign(codec.fragment_count, false);

  std::vector<std::uint8_t> guesses;
  guesses.reserve(challenge.rows.size());

  for (const auto& row : challenge.rows) {
    if (row.empty()) throw ProtocolError("empty challenge row");
    const std::size_t n = row.size();

    std::vector<const ClientRow*> crows;
    std::vector<MatcherModel> models;
    crows.reserve(n);
    models.reserve(n);
    for (const auto& entry : row) {
      auto it = vault.client_table.rows.find(entry.h2);
      if (it == vault.client_table.rows.end()) throw ProtocolError("unknown h2 in challenge");
      crows.push_back(&it->second);
      auto mit = vault.model_table.entries.find(it->second.h1);
      if (mit == vault.model_table.entries.end())
        throw ProtocolError("client row references a missing model");
      models.push_back(MatcherModel::deserialize(mit->second.model_blob));
    }
    auto slot_it = vault.fragment_slot.find(row[0].h2);
    if (slot_it == vault.fragment_slot.end()) throw ProtocolError("challenge row has no slot");
    const std::size_t slot = slot_it->second;

    try {
      RowClassification cls = classify_row(models, live);
      const std::size_t c_obs = cls.best_index;
      const std::uint8_t i_real = crows[c_obs]->choice_index;
      guesses.push_back(static_cast<std::uint8_t>((c_obs + n - i_real) % n));
      if (slot < set.fragments.size()) {
        set.fragments[slot] = mask(crows[c_obs]->khat_fragment, row[c_obs].pad_fragment);
        set.present[slot] = true;
      }
    } catch (const ModalityUnavailable&) {
      // The row stays an erasure, but K_perm still needs its shift: the
      // stored index of whichever entry landed at column 0 yields it
      // without touching the (unavailable) classifiers.
      guesses.push_back(static_cast<std::uint8_t>((n - crows[0]->choice_index) % n));
    }
  }

  Response response;
  response.challenge_id = challenge.challenge_id;
  response.n2 = challenge.n2;
  response.guess_vector = guesses;

  std::optional<Bytes> k_pr = ecc_decode(set, codec);
  for (std::size_t i = 0; i < set.fragments.size(); ++i)
    if (set.present[i]) secure_wipe(set.fragments[i]);
  if (!k_pr) {
    response.status = ResponseStatus::DecodeFailure;
    return response;
  }

  PermKey perm{guesses};
  RsaPublicKey pub = RsaPublicKey::deserialize(vault.k_pu);
  response.signature = rsa_sign(*k_pr, pub, response_signing_digest(perm, challenge.n2));
  if (recovered_key_digest) *recovered_key_digest = sha256_bytes(*k_pr);
  secure_wipe(*k_pr);
  response.status = ResponseStatus::Signature;
  return response;
}

Response forge_response_with_key(const Challenge& challenge, const CasVault& vault,
                                 BytesView stolen_k_pr) {
  // The stored choice index of the entry now sitting at column 0 gives the
  // shift directly; no classification and no pads needed. Exactly the
  // adversary the decoy mechanism exists to expose.
  std::vector<std::uint8_t> shifts;
  shifts.reserve(challenge.rows.size());
  for (const auto& row : challenge.rows) {
    const std::size_t n = row.size();
    auto it = vault.client_table.rows.find(row[0].h2);
    if (it == vault.client_table.rows.end()) throw ProtocolError("unknown h2 in challenge");
    shifts.push_back(static_cast<std::uint8_t>((n - it->second.choice_index) % n));
  }
  Response response;
  response.challenge_id = challenge.challenge_id;
  response.n2 = challenge.n2;
  response.status = ResponseStatus::Signature;
  response.guess_vector = shifts;
  PermKey perm{shifts};
  RsaPublicKey pub = RsaPublicKey::deserialize(vault.k_pu);
  response.signature = rsa_sign(stolen_k_pr, pub, response_signing_digest(perm, challenge.n2));
  return response;
}

Verdict verify_response(EnrollmentRecord& record, const ChallengeSession& session,
                        const Response& response, const PolicyConfig& policy_config,
                        std::size_t table_rows, NonceRegistry& nonces, std::uint64_t now) {
  if (response.challenge_id != session.challenge.challenge_id)
    return Verdict{false, RejectReason::NoSession};
  if (response.n2 != session.challenge.n2 || !nonces.is_live(response.n2, now))
    return Verdict{false, RejectReason::Replay};

  // Single use: whatever the outcome below, this challenge is spent.
  nonces.retire(response.n2);
  nonces.retire(session.challenge.challenge_id);

  if (record.consumed) return Verdict{false, RejectReason::KeyConsumed};

  if (response.status == ResponseStatus::DecodeFailure) {
    if (!session.decoy) {
      // Genuine challenge the client could not answer: tighten.
      record.policy = update_policy(record.policy, policy_config, table_rows, 0,
                                    session.perm.shifts.size());
      record.policy.failure_streak += 1;
    }
    // A decoy answered with DecodeFailure is the healthy outcome; the wire
    // verdict stays indistinguishable from a real failed challenge.
    return Verdict{false, RejectReason::DecodeFailure};
  }

  RsaPublicKey pub = RsaPublicKey::deserialize(record.k_pu);
  Bytes digest = response_signing_digest(session.perm, session.challenge.n2);
  if (!rsa_verify(pub, digest, response.signature)) {
    record.policy.failure_streak += 1;
    return Verdict{false, RejectReason::BadSignature};
  }

  if (session.decoy) return Verdict{false, RejectReason::IntrusionFlag};

  std::size_t total = session.perm.shifts.size();
  std::size_t correct = total;  // Accept/Reject-only fallback when no guesses
  if (response.guess_vector) {
    correct = 0;
    for (std::size_t i = 0; i < total && i < response.guess_vector->size(); ++i)
      if ((*response.guess_vector)[i] == session.perm.shifts[i]) ++correct;
  }
  record.consumed = true;
  record.policy = update_policy(record.policy, policy_config, table_rows, correct, total);
  record.policy.failure_streak = 0;
  return Verdict{true, RejectReason::None};
}

}  // namespace caliper
