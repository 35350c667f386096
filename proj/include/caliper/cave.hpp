#pragma once

#include <climits>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "caliper/protocol.hpp"

namespace caliper {

// ------------------------------------------------------------------ sizing

struct SizingParams {
  std::size_t digest_len = 32;
  std::size_t choices = 4;           // N
  std::size_t rows = 128;            // M
  std::size_t pad_fragment_len = 2;
  std::size_t index_len = 1;
  std::size_t key_pub_len = 256;     // public-key bytes held per record
  std::size_t uid_digest_len = 32;
  std::uint64_t budget = 131072;
};

struct SizingReport {
  std::uint64_t row_bytes = 0;
  std::uint64_t key_bytes = 0;
  std::uint64_t keys_in_budget = 0;
};

SizingReport sizing_report(const SizingParams& p);

// ------------------------------------------------------------------- store

struct StoreCorruption : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StoredRecord {
  EnrollmentRecord record;
  std::uint64_t cost = 0;  // TCM bytes this record occupies
  bool archived = false;
};

/// Append-only JSONL record store plus a line-delimited audit log, both
/// flushed before any acknowledgment leaves the service. A partial trailing
/// line (torn write at crash) is ignored on load; anything else malformed
/// refuses to load.
class RecordStore {
 public:
  explicit RecordStore(const std::string& dir);

  void append_enroll(const StoredRecord& rec);
  void update(const EnrollmentRecord& rec);    // persists consumed/policy
  void archive(const Digest& stored_hash);

  StoredRecord* find_by_hash(const Digest& stored_hash);
  std::vector<StoredRecord*> for_uid(const Digest& uid_digest);
  std::uint64_t usage() const;  // bytes held by non-archived records

  void audit(const std::string& event);
  std::uint64_t audit_seq() const { return audit_seq_; }

  /// Rewrites the log as one line per live record.
  void compact();

  const std::vector<StoredRecord>& records() const { return records_; }
  std::string records_path() const;
  std::string audit_path() const;

 private:
  void append_line(const std::string& line);
  std::string dir_;
  std::vector<StoredRecord> records_;
  std::uint64_t audit_seq_ = 0;
};

// ----------------------------------------------------------------- service

struct CaveConfig {
  std::string store_dir;
  double decoy_prob = 0.1;
  std::uint64_t tcm_budget = 0;  // 0 = no TCM budget enforcement
  std::uint64_t nonce_ttl = 1024;
  PolicyConfig policy;
  std::size_t default_rows = SIZE_MAX;  // clamped to the table size
};

/// The verifier daemon: one instance owns the record store and its envelope
/// keypair, and turns each request message into exactly one reply message.
class CaveService {
 public:
  CaveService(CaveConfig config, Rng rng);

  const std::array<std::uint8_t, 32>& public_key() const { return keys_.pk; }

  Message handle(const Message& request);
  /// Blocking loop over one channel: recv, handle, send, until close.
  void serve_channel(Channel& channel);

  /// Archives every consumed record of the uid; false when no unconsumed
  /// record remains (rotation exhausted).
  bool rotate_key(const Digest& uid_digest);

  RecordStore& store() { return store_; }
  std::uint64_t clock() const { return clock_; }
  std::size_t open_sessions() const { return sessions_.size(); }

 private:
  struct Session {
    ChallengeSession challenge;
    Digest uid_digest{};
    std::array<std::uint8_t, 32> reply_pk{};
    std::size_t table_rows = 0;
  };

  Message handle_enroll(const Message& request);
  Message handle_access(const Message& request);
  Message handle_response(const Message& request);
  Message seal_to(const std::array<std::uint8_t, 32>& pk, MessageType type, BytesView payload);

  CaveConfig config_;
  Rng rng_;
  BoxKeyPair keys_;
  RecordStore store_;
  NonceRegistry nonces_;
  std::map<Nonce, Session> sessions_;
  std::uint64_t clock_ = 0;
};

}  // namespace caliper
