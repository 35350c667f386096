#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "caliper/protocol.hpp"

namespace caliper {

// ----------------------------------------------------------- sensor stream

/// Synthetic multi-modal sensor source. Feature modalities draw from a
/// user profile; the device image backs comparator rows. Modalities can be
/// dropped permanently (failover) or silenced for a window of ticks.
class SensorStream {
 public:
  SensorStream(UserProfile profile, std::size_t window, Rng rng);

  void drop(std::uint8_t mid);
  void outage(std::uint8_t mid, std::uint64_t from, std::uint64_t until);

  /// The most recent `window` samples per available modality at tick `now`.
  LiveData poll(std::uint64_t now, const DeviceImage* image);

 private:
  UserProfile profile_;
  std::size_t window_;
  Rng rng_;
  std::set<std::uint8_t> dropped_;
  std::vector<std::tuple<std::uint8_t, std::uint64_t, std::uint64_t>> outages_;
};

// ------------------------------------------------------------ client store

struct ClientConfig {
  std::string store_dir;
  std::string uid = "alice";
  std::size_t rows = 16;           // M
  std::size_t choices = 4;         // N
  std::size_t keys = 1;            // pre-enrolled rotation keys
  std::size_t key_bits = 2048;
  std::size_t parity = 32;         // RS parity symbols per block
  std::uint64_t seed = 1;
  std::size_t comparator_rows = 8;     // block-hash rows; the rest are feature rows
  std::size_t feature_modalities = 2;  // mids 2, 3, ...
  std::size_t feature_dim = 4;
  double sigma = 0.0;              // within-user sample noise
  std::size_t window = 8;          // live samples per modality per challenge
};

inline constexpr std::uint8_t kComparatorMid = 1;

UserProfile make_profile(const ClientConfig& config, Rng& rng);
std::vector<RowSpec> build_ensemble(const ClientConfig& config, const DeviceImage& image,
                                    const UserProfile& profile, Rng& rng);

/// Everything the client persists: one vault per rotation key plus the
/// device image, envelope keys, and the profile that regenerates its
/// sensor stream.
struct ClientStore {
  std::string uid;
  std::vector<CasVault> vaults;
  std::size_t next_slot = 0;  // first unconsumed vault
  DeviceImage image;
  BoxKeyPair keys;
  std::array<std::uint8_t, 32> cave_pk{};
  UserProfile profile;
  std::size_t window = 8;

  void save(const std::string& dir) const;
  static ClientStore load(const std::string& dir);
  static bool exists(const std::string& dir);
};

// -------------------------------------------------------------- operations

/// Enrolls `config.keys` rotation keys over the channel and writes the
/// store. Refuses to overwrite an existing store unless forced.
ClientStore cmd_enroll(const ClientConfig& config, const std::array<std::uint8_t, 32>& cave_pk,
                       Channel& channel, bool force = false,
                       std::vector<SecretCapture>* captures = nullptr);

struct SessionLoopState {
  std::uint64_t next_challenge_time = 0;
  std::size_t consecutive_failures = 0;
  bool active_auth_pending = false;
};

/// Simulated operator prompt; returns whether the operator confirmed.
using ActiveAuthHook = std::function<bool()>;

struct RunConfig {
  std::size_t max_rounds = 0;          // 0: run until rotation exhausts
  std::size_t active_auth_after = 3;   // consecutive failures before prompting
  ActiveAuthHook active_auth;
  std::vector<std::uint8_t> drop_modalities;
  std::uint64_t impostor_seed = 0;     // nonzero: sample from a foreign profile
};

struct RunStats {
  std::size_t rounds = 0;
  std::size_t accepts = 0;
  std::size_t rejects = 0;
  std::size_t decode_failures = 0;
  std::size_t active_auth_prompts = 0;
  bool exhausted = false;
  std::vector<std::string> transcript;
  Bytes last_key_digest;  // sha256(K_pr) of the most recent decoded round
};

RunStats cmd_run(ClientStore& store, const RunConfig& run, Channel& channel, Rng& rng);

enum class AttackMode { Replay, CachedKey, Tamper };

struct AttackReport {
  bool accepted = false;
  RejectReason reason = RejectReason::None;
  std::vector<std::string> transcript;
};

/// Adversary simulations against a live verifier. CachedKey requires the
/// stolen private key bytes.
AttackReport cmd_attack(ClientStore& store, AttackMode mode, Channel& channel, Rng& rng,
                        BytesView stolen_k_pr = {});

}  // namespace caliper
