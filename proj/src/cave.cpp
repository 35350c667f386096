#include "caliper/cave.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace caliper {

// ------------------------------------------------------------------ sizing

SizingReport sizing_report(const SizingParams& p) {
  if (p.digest_len == 0 || p.choices == 0 || p.rows == 0)
    throw std::invalid_argument("sizing_report: degenerate parameters");
  SizingReport r;
  r.row_bytes = static_cast<std::uint64_t>(p.choices) *
                (p.pad_fragment_len + p.index_len + p.digest_len);
  r.key_bytes = p.key_pub_len + p.uid_digest_len + p.rows * r.row_bytes;
  r.keys_in_budget = p.budget / r.key_bytes;
  return r;
}

// ------------------------------------------------------------------- store

namespace {

std::string digest_hex(const Digest& d) {
  return hex_encode(BytesView(d.data(), d.size()));
}

Digest digest_from_hex(const std::string& h) {
  Bytes raw = hex_decode(h);
  if (raw.size() != kDigestLen) throw StoreCorruption("bad digest length in store");
  Digest d{};
  std::copy(raw.begin(), raw.end(), d.begin());
  return d;
}

json record_to_json(const StoredRecord& r) {
  return json{{"event", "enroll"},
              {"uid", digest_hex(r.record.uid_digest)},
              {"k_pu", hex_encode(r.record.k_pu)},
              {"h", digest_hex(r.record.stored_hash)},
              {"cost", r.cost},
              {"rows", r.record.policy.challenge_rows_next},
              {"interval", r.record.policy.interval_next},
              {"streak", r.record.policy.failure_streak},
              {"consumed", r.record.consumed},
              {"archived", r.archived}};
}

}  // namespace

RecordStore::RecordStore(const std::string& dir) : dir_(dir) {
  fs::create_directories(dir_);

  std::ifstream in(records_path(), std::ios::binary);
  if (in) {
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    while (pos < content.size()) {
      std::size_t nl = content.find('\n', pos);
      bool torn = nl == std::string::npos;  // no newline: possibly a torn write
      std::string line = content.substr(pos, torn ? std::string::npos : nl - pos);
      pos = torn ? content.size() : nl + 1;
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) {
        if (torn) break;  // crash mid-append: drop the fragment
        throw StoreCorruption("malformed record line");
      }
      try {
        std::string event = j.at("event");
        if (event == "enroll") {
          StoredRecord r;
          r.record.uid_digest = digest_from_hex(j.at("uid"));
          r.record.k_pu = hex_decode(j.at("k_pu"));
          r.record.stored_hash = digest_from_hex(j.at("h"));
          r.cost = j.at("cost");
          r.record.policy.challenge_rows_next = j.at("rows");
          r.record.policy.interval_next = j.at("interval");
          r.record.policy.failure_streak = j.at("streak");
          r.record.consumed = j.at("consumed");
          r.archived = j.value("archived", false);
          records_.push_back(std::move(r));
        } else if (event == "update") {
          Digest h = digest_from_hex(j.at("h"));
          auto* r = find_by_hash(h);
          if (!r) throw StoreCorruption("update for unknown record");
          r->record.policy.challenge_rows_next = j.at("rows");
          r->record.policy.interval_next = j.at("interval");
          r->record.policy.failure_streak = j.at("streak");
          r->record.consumed = j.at("consumed");
        } else if (event == "archive") {
          auto* r = find_by_hash(digest_from_hex(j.at("h")));
          if (!r) throw StoreCorruption("archive for unknown record");
          r->archived = true;
        } else {
          throw StoreCorruption("unknown record event");
        }
      } catch (const json::exception&) {
        throw StoreCorruption("record line missing fields");
      }
    }
  }

  std::ifstream audit_in(audit_path(), std::ios::binary);
  if (audit_in) {
    std::string line;
    while (std::getline(audit_in, line))
      if (!line.empty()) ++audit_seq_;
  }
}

std::string RecordStore::records_path() const { return dir_ + "/records.jsonl"; }
std::string RecordStore::audit_path() const { return dir_ + "/audit.log"; }

void RecordStore::append_line(const std::string& line) {
  std::ofstream out(records_path(), std::ios::binary | std::ios::app);
  out << line << '\n';
  out.flush();
  if (!out) throw StoreCorruption("record store write failed");
}

void RecordStore::append_enroll(const StoredRecord& rec) {
  append_line(record_to_json(rec).dump());
  records_.push_back(rec);
}

void RecordStore::update(const EnrollmentRecord& rec) {
  auto* r = find_by_hash(rec.stored_hash);
  if (!r) throw StoreCorruption("update for unknown record");
  r->record = rec;
  append_line(json{{"event", "update"},
                   {"h", digest_hex(rec.stored_hash)},
                   {"rows", rec.policy.challenge_rows_next},
                   {"interval", rec.policy.interval_next},
                   {"streak", rec.policy.failure_streak},
                   {"consumed", rec.consumed}}
                  .dump());
}

void RecordStore::archive(const Digest& stored_hash) {
  auto* r = find_by_hash(stored_hash);
  if (!r) throw StoreCorruption("archive for unknown record");
  r->archived = true;
  append_line(json{{"event", "archive"}, {"h", digest_hex(stored_hash)}}.dump());
}

StoredRecord* RecordStore::find_by_hash(const Digest& stored_hash) {
  for (auto& r : records_)
    if (r.record.stored_hash == stored_hash) return &r;
  return nullptr;
}

std::vector<StoredRecord*> RecordStore::for_uid(const Digest& uid_digest) {
  std::vector<StoredRecord*> out;
  for (auto& r : records_)
    if (r.record.uid_digest == uid_digest) out.push_back(&r);
  return out;
}

std::uint64_t RecordStore::usage() const {
  std::uint64_t total = 0;
  for (const auto& r : records_)
    if (!r.archived) total += r.cost;
  return total;
}

void RecordStore::audit(const std::string& event) {
  ++audit_seq_;
  std::ofstream out(audit_path(), std::ios::binary | std::ios::app);
  out << "seq=" << audit_seq_ << ' ' << event << '\n';
  out.flush();
  if (!out) throw StoreCorruption("audit log write failed");
}

void RecordStore::compact() {
  std::string tmp = records_path() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    for (const auto& r : records_) out << record_to_json(r).dump() << '\n';
    out.flush();
    if (!out) throw StoreCorruption("compaction write failed");
  }
  fs::rename(tmp, records_path());
}

// ----------------------------------------------------------------- service

namespace {

std::string keys_path(const std::string& dir) { return dir + "/cave.keys"; }
std::string nonces_path(const std::string& dir) { return dir + "/nonces.txt"; }

BoxKeyPair load_or_create_keys(const std::string& dir, Rng& rng) {
  fs::create_directories(dir);
  std::ifstream in(keys_path(dir));
  if (in) {
    std::string pk_hex, sk_hex;
    if (!(in >> pk_hex >> sk_hex)) throw StoreCorruption("malformed key file");
    Bytes pk = hex_decode(pk_hex), sk = hex_decode(sk_hex);
    if (pk.size() != 32 || sk.size() != 32) throw StoreCorruption("bad key length");
    BoxKeyPair keys;
    std::copy(pk.begin(), pk.end(), keys.pk.begin());
    std::copy(sk.begin(), sk.end(), keys.sk.begin());
    return keys;
  }
  BoxKeyPair keys = BoxKeyPair::generate(rng);
  std::ofstream out(keys_path(dir), std::ios::binary | std::ios::trunc);
  out << hex_encode(BytesView(keys.pk.data(), keys.pk.size())) << '\n'
      << hex_encode(BytesView(keys.sk.data(), keys.sk.size())) << '\n';
  out.flush();
  if (!out) throw StoreCorruption("key file write failed");
  return keys;
}

}  // namespace

CaveService::CaveService(CaveConfig config, Rng rng)
    : config_(std::move(config)),
      rng_(std::move(rng)),
      keys_(load_or_create_keys(config_.store_dir, rng_)),
      store_(config_.store_dir),
      nonces_(config_.nonce_ttl) {
  if (fs::exists(nonces_path(config_.store_dir))) nonces_.load(nonces_path(config_.store_dir));
}

Message CaveService::seal_to(const std::array<std::uint8_t, 32>& pk, MessageType type,
                             BytesView payload) {
  return Message{type, seal(pk, payload, rng_).serialize()};
}

Message CaveService::handle(const Message& request) {
  ++clock_;
  nonces_.expire_before(clock_);
  Message reply;
  try {
    switch (request.type) {
      case MessageType::EnrollRequest: reply = handle_enroll(request); break;
      case MessageType::AccessRequest: reply = handle_access(request); break;
      case MessageType::Response: reply = handle_response(request); break;
      default: reply = make_error_message(RejectReason::BadRequest, "unexpected message type");
    }
  } catch (const OpenFailure&) {
    reply = make_error_message(RejectReason::BadRequest, "envelope does not open");
  } catch (const ParseError& e) {
    reply = make_error_message(RejectReason::BadRequest, e.what());
  } catch (const ProtocolError& e) {
    reply = make_error_message(RejectReason::BadRequest, e.what());
  }
  nonces_.save(nonces_path(config_.store_dir));
  return reply;
}

void CaveService::serve_channel(Channel& channel) {
  while (auto request = channel.recv()) channel.send(handle(*request));
}

Message CaveService::handle_enroll(const Message& request) {
  // Open a copy of the payload first for budget and duplicate checks.
  Envelope env = Envelope::deserialize(request.payload);
  EnrollRequestPayload p = EnrollRequestPayload::deserialize(open(keys_, env));
  ServerTable table = ServerTable::canonical_decode(p.server_table);
  if (table.row_count() == 0 || table.choices() == 0)
    throw ProtocolError("empty server table in enrollment");

  SizingParams sizing;
  sizing.choices = table.choices();
  sizing.rows = table.row_count();
  sizing.pad_fragment_len = table.rows[0][0].pad_fragment.size();
  sizing.key_pub_len = RsaPublicKey::deserialize(p.k_pu).n.size();
  std::uint64_t cost = sizing_report(sizing).key_bytes;

  if (config_.tcm_budget != 0 && store_.usage() + cost > config_.tcm_budget) {
    store_.audit("event=enroll-reject uid=" + digest_hex(p.uid_digest) +
                 " reason=BudgetExceeded cost=" + std::to_string(cost) +
                 " usage=" + std::to_string(store_.usage()));
    return make_error_message(RejectReason::BudgetExceeded, "tcm budget exhausted");
  }
  for (auto* r : store_.for_uid(p.uid_digest)) {
    if (!r->archived && r->record.k_pu == p.k_pu) {
      store_.audit("event=enroll-reject uid=" + digest_hex(p.uid_digest) +
                   " reason=DuplicateEnrollment");
      return make_error_message(RejectReason::DuplicateEnrollment,
                                "key already enrolled; rotate instead");
    }
  }

  EnrollOutcome out = enroll_cave(request, keys_, config_.policy, config_.default_rows, rng_);
  store_.append_enroll(StoredRecord{out.record, cost, false});
  store_.audit("event=enroll uid=" + digest_hex(out.record.uid_digest) +
               " h=" + digest_hex(out.record.stored_hash) + " cost=" + std::to_string(cost));
  return out.receipt;
}

Message CaveService::handle_access(const Message& request) {
  Envelope env = Envelope::deserialize(request.payload);
  AccessRequestPayload p = AccessRequestPayload::deserialize(open(keys_, env));
  const std::string uid_hex = digest_hex(p.uid_digest);

  auto reject = [&](RejectReason reason) {
    store_.audit("event=access-reject uid=" + uid_hex +
                 " reason=" + reject_reason_name(reason));
    return seal_to(p.reply_pk, MessageType::Verdict, Verdict{false, reason}.serialize());
  };

  auto uid_records = store_.for_uid(p.uid_digest);
  bool any_unconsumed = std::any_of(uid_records.begin(), uid_records.end(), [](StoredRecord* r) {
    return !r->archived && !r->record.consumed;
  });

  StoredRecord* rec = store_.find_by_hash(sha256(p.sealed_blob));
  if (!rec || rec->record.uid_digest != p.uid_digest) {
    // Unknown blob: a client that ran out of keys, or a tampered table.
    return reject(any_unconsumed ? RejectReason::TamperDetected : RejectReason::RotationExhausted);
  }
  if (rec->archived || rec->record.consumed)
    return reject(any_unconsumed ? RejectReason::KeyConsumed : RejectReason::RotationExhausted);

  bool decoy = rng_.uniform01() < config_.decoy_prob;
  ChallengeSession session;
  try {
    session = decoy
                  ? make_decoy_challenge(rec->record, p.sealed_blob, keys_, rng_, nonces_, clock_)
                  : make_challenge(rec->record, p.sealed_blob, keys_, rng_, nonces_, clock_);
  } catch (const TamperDetected&) {
    return reject(RejectReason::TamperDetected);
  } catch (const KeyConsumed&) {
    return reject(RejectReason::KeyConsumed);
  }

  Session s;
  s.challenge = session;
  s.uid_digest = p.uid_digest;
  s.reply_pk = p.reply_pk;
  s.table_rows = session.table_rows;
  sessions_[session.challenge.challenge_id] = s;

  store_.audit("event=challenge uid=" + uid_hex + " h=" + digest_hex(rec->record.stored_hash) +
               " rows=" + std::to_string(session.challenge.rows.size()) +
               " decoy=" + (session.decoy ? "1" : "0"));
  return seal_to(p.reply_pk, MessageType::Challenge, session.challenge.serialize());
}

Message CaveService::handle_response(const Message& request) {
  Envelope env = Envelope::deserialize(request.payload);
  Response response = Response::deserialize(open(keys_, env));

  auto it = sessions_.find(response.challenge_id);
  if (it == sessions_.end())
    return make_error_message(RejectReason::NoSession, "no open session for challenge");
  // The session stays in the map after its verdict: a replayed response then
  // finds the retired nonce and is rejected as a replay, not as NoSession.
  Session session = it->second;

  StoredRecord* rec = store_.find_by_hash(session.challenge.record_hash);
  if (!rec) return make_error_message(RejectReason::NoSession, "record vanished");

  Verdict verdict = verify_response(rec->record, session.challenge, response, config_.policy,
                                    session.table_rows, nonces_, clock_);
  store_.update(rec->record);  // persisted before the verdict leaves

  std::string outcome;
  if (verdict.accept) {
    outcome = "accept";
  } else if (verdict.reason == RejectReason::IntrusionFlag) {
    outcome = "intrusion";
  } else if (session.challenge.decoy && verdict.reason == RejectReason::DecodeFailure) {
    outcome = "decoy-healthy";
  } else {
    outcome = std::string("reject-") + reject_reason_name(verdict.reason);
  }
  store_.audit("event=verdict uid=" + digest_hex(session.uid_digest) +
               " h=" + digest_hex(rec->record.stored_hash) + " outcome=" + outcome);
  return seal_to(session.reply_pk, MessageType::Verdict, verdict.serialize());
}

bool CaveService::rotate_key(const Digest& uid_digest) {
  bool any_left = false;
  for (auto* r : store_.for_uid(uid_digest)) {
    if (r->archived) continue;
    if (r->record.consumed) {
      store_.archive(r->record.stored_hash);
      store_.audit("event=rotate-archive uid=" + digest_hex(uid_digest) +
                   " h=" + digest_hex(r->record.stored_hash));
    } else {
      any_left = true;
    }
  }
  if (!any_left)
    store_.audit("event=rotate-exhausted uid=" + digest_hex(uid_digest));
  return any_left;
}

}  // namespace caliper
