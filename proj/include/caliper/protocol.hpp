#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "caliper/blocks.hpp"
#include "caliper/bytes.hpp"
#include "caliper/ecc.hpp"
#include "caliper/rsa.hpp"
#include "caliper/transport.hpp"
#include "caliper/vault.hpp"

namespace caliper {

// ---------------------------------------------------------- wire payloads

struct ChallengeRowEntry {
  Digest h2{};
  Bytes pad_fragment;
};

/// A challenge: a random subset of server-table rows, each rotated right by
/// a secret shift, original row indices withheld. The decoy flag never
/// serializes; it lives only in the verifier's session state.
struct Challenge {
  Nonce challenge_id{};
  std::vector<std::vector<ChallengeRowEntry>> rows;
  Nonce n2{};

  Bytes serialize() const;
  static Challenge deserialize(BytesView data);
};

/// Per-row shift amounts in challenge order.
struct PermKey {
  std::vector<std::uint8_t> shifts;

  Bytes encode() const;
  bool operator==(const PermKey&) const = default;
};

enum class ResponseStatus : std::uint8_t {
  Signature = 0,
  DecodeFailure = 1,
};

struct Response {
  Nonce challenge_id{};
  Nonce n2{};
  ResponseStatus status = ResponseStatus::DecodeFailure;
  Bytes signature;
  std::optional<std::vector<std::uint8_t>> guess_vector;

  Bytes serialize() const;
  static Response deserialize(BytesView data);
};

enum class RejectReason : std::uint8_t {
  None = 0,
  Replay = 1,
  BadSignature = 2,
  TamperDetected = 3,
  KeyConsumed = 4,
  RotationExhausted = 5,
  NoSession = 6,
  DecodeFailure = 7,
  IntrusionFlag = 8,
  BudgetExceeded = 9,
  DuplicateEnrollment = 10,
  BadRequest = 11,
};

const char* reject_reason_name(RejectReason reason);

struct Verdict {
  bool accept = false;
  RejectReason reason = RejectReason::None;

  Bytes serialize() const;
  static Verdict deserialize(BytesView data);
  bool operator==(const Verdict&) const = default;
};

struct EnrollRequestPayload {
  Bytes server_table;  // canonical T_S
  Bytes k_pu;          // serialized RSA public key
  Digest uid_digest{};
  Nonce n1{};
  std::array<std::uint8_t, 32> reply_pk{};  // CAS envelope key for the receipt

  Bytes serialize() const;
  static EnrollRequestPayload deserialize(BytesView data);
};

struct EnrollReceiptPayload {
  Bytes sealed_blob;  // serialized envelope of (T_S || n1) under the CAVE key
  Nonce n1{};

  Bytes serialize() const;
  static EnrollReceiptPayload deserialize(BytesView data);
};

struct AccessRequestPayload {
  Digest uid_digest{};
  Bytes sealed_blob;
  std::array<std::uint8_t, 32> reply_pk{};

  Bytes serialize() const;
  static AccessRequestPayload deserialize(BytesView data);
};

Bytes encode_sealed_blob_plaintext(const Bytes& server_table, const Nonce& n1);
void decode_sealed_blob_plaintext(BytesView data, Bytes& server_table, Nonce& n1);

// ------------------------------------------------------------------ policy

struct PolicyConfig {
  std::size_t min_rows = 4;
  std::uint64_t interval_min = 5;
  std::uint64_t interval_max = 600;
  double raise_threshold = 0.9;  // ratio at or above: relax
  double drop_threshold = 0.5;   // ratio below: tighten to the floor
};

struct PolicyState {
  std::size_t challenge_rows_next = 0;
  std::uint64_t interval_next = 0;  // seconds
  std::size_t failure_streak = 0;
};

PolicyState update_policy(const PolicyState& state, const PolicyConfig& config,
                          std::size_t table_rows, std::size_t guesses_correct,
                          std::size_t guesses_total);

// ----------------------------------------------------------- CAVE records

struct EnrollmentRecord {
  Digest uid_digest{};
  Bytes k_pu;
  Digest stored_hash{};  // H = sha256(sealed server-table blob)
  PolicyState policy;
  bool consumed = false;
};

/// Verifier-side state for one outstanding challenge.
struct ChallengeSession {
  Digest record_hash{};  // which enrollment the challenge was built from
  Challenge challenge;
  PermKey perm;
  bool decoy = false;
  std::size_t table_rows = 0;  // M of the table the challenge came from
};

struct TamperDetected : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct KeyConsumed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Builds a challenge from a stored enrollment and the sealed table blob the
/// client presented. Verifies the blob hash, opens it, selects a random
/// subset of rows in random order, rotates each row right by its secret
/// shift, and retains the shifts as the session PermKey.
ChallengeSession make_challenge(const EnrollmentRecord& record, const Bytes& sealed_blob,
                                const BoxKeyPair& cave_keys, Rng& rng, NonceRegistry& nonces,
                                std::uint64_t now);

/// Identical wire shape to a real challenge, but every pad fragment is
/// fresh randomness: an honest client can only report decode failure, and
/// any valid signature exposes a cached-key adversary.
ChallengeSession make_decoy_challenge(const EnrollmentRecord& record, const Bytes& sealed_blob,
                                      const BoxKeyPair& cave_keys, Rng& rng, NonceRegistry& nonces,
                                      std::uint64_t now);

// -------------------------------------------------------------- CAS vault

/// Everything the client persists per enrolled key slot.
struct CasVault {
  ModelTable model_table;
  ClientTable client_table;
  std::map<Digest, std::size_t> fragment_slot;
  CodecParams codec;
  Bytes k_pu;
  Digest uid_digest{};
  Bytes sealed_blob;

  Bytes serialize() const;
  static CasVault deserialize(BytesView data);
};

/// Test-only capture of enrollment secrets, used by the privacy scan to
/// prove they never reach persistence or the wire.
struct SecretCapture {
  Bytes k_pr;
  Bytes pad;
  Bytes codeword;
};

/// Client half of enrollment over an open channel. Generates the key pair,
/// builds and seals the tables, verifies the n1 echo, wipes every secret,
/// and returns the persistent vault state.
CasVault enroll_cas(const UserContext& user, const std::vector<RowSpec>& ensemble,
                    const CodecParams& codec, std::size_t key_bits,
                    const std::array<std::uint8_t, 32>& cave_pk, const BoxKeyPair& cas_keys,
                    Channel& channel, Rng& rng, SecretCapture* capture = nullptr);

/// Verifier half of enrollment: opens the request, reseals the table to its
/// own key, stores only the hash, and returns the receipt message.
struct EnrollOutcome {
  EnrollmentRecord record;
  Message receipt;
};
EnrollOutcome enroll_cave(const Message& request, const BoxKeyPair& cave_keys,
                          const PolicyConfig& policy_defaults, std::size_t default_rows,
                          Rng& rng);

/// Client answer: resolve each challenged row through T_C and T_M, classify
/// with live samples, unmask fragments, decode the key, and sign
/// digest(K_perm || n2). Modality outages become erasures. On success,
/// `recovered_key_digest` (when given) receives sha256(K_pr) so a derived
/// key can feed downstream consumers without exposing the raw key.
Response answer_challenge(const Challenge& challenge, const CasVault& vault,
                          const LiveData& live, Bytes* recovered_key_digest = nullptr);

/// Response as a cached-key adversary forms it: shifts recovered from the
/// stored choice indices alone, no classification, signature under a stolen
/// private key.
Response forge_response_with_key(const Challenge& challenge, const CasVault& vault,
                                 BytesView stolen_k_pr);

Verdict verify_response(EnrollmentRecord& record, const ChallengeSession& session,
                        const Response& response, const PolicyConfig& policy_config,
                        std::size_t table_rows, NonceRegistry& nonces, std::uint64_t now);

Bytes response_signing_digest(const PermKey& perm, const Nonce& n2);

Message make_error_message(RejectReason reason, const std::string& detail);
std::pair<RejectReason, std::string> parse_error_message(const Message& message);

}  // namespace caliper
