#pragma once

// Shared fixtures for the protocol and service tests: a synthetic device
// image, a comparator-block ensemble over it, and a one-call enrollment
// that runs both protocol roles over an in-process channel.

#include <climits>
#include <functional>
#include <thread>

#include "caliper/blocks.hpp"
#include "caliper/ecc.hpp"
#include "caliper/protocol.hpp"
#include "caliper/transport.hpp"
#include "caliper/vault.hpp"

namespace caliper::testing {

inline DeviceImage make_image(Rng& rng, std::size_t blocks = 64, std::size_t block_size = 64) {
  DeviceImage img;
  img.block_size = block_size;
  img.data = rng.bytes(blocks * block_size);
  return img;
}

inline std::vector<RowSpec> to_row_specs(const std::vector<BlockRow>& rows) {
  std::vector<RowSpec> out;
  out.reserve(rows.size());
  for (const auto& b : rows) {
    RowSpec s;
    s.real_model_blob = b.real.serialize();
    s.mid = b.real.mid;
    for (const auto& c : b.chaff) s.chaff_model_blobs.push_back(c.serialize());
    out.push_back(std::move(s));
  }
  return out;
}

struct World {
  DeviceImage image;
  std::vector<RowSpec> ensemble;
  CodecParams codec;
  UserContext user;
  LiveData live;
  BoxKeyPair cave_keys;
  BoxKeyPair cas_keys;
  std::size_t key_bits = 0;
};

inline World make_world(Rng& rng, std::size_t m = 16, std::size_t n = 4,
                        std::size_t key_bits = 512, std::size_t parity = 16) {
  World w;
  w.image = make_image(rng);
  w.ensemble = to_row_specs(make_block_ensemble(w.image, m, n - 1, /*mid=*/1, rng));
  w.codec = make_codec_params(key_bits / 8, parity, m);
  w.key_bits = key_bits;
  w.user = UserContext::from_uid("user-1");
  w.cave_keys = BoxKeyPair::generate(rng);
  w.cas_keys = BoxKeyPair::generate(rng);
  w.live.image = &w.image;
  return w;
}

struct EnrollResult {
  CasVault vault;
  EnrollmentRecord record;
};

/// Enrolls one key: CAVE role on a helper thread, CAS role inline.
inline EnrollResult enroll_pair(World& w, Rng& cas_rng, Rng& cave_rng,
                                const PolicyConfig& policy = {},
                                std::size_t default_rows = SIZE_MAX,
                                SecretCapture* capture = nullptr) {
  InProcPair pair = make_inproc_pair();
  EnrollResult out;
  std::thread server([&] {
    std::optional<Message> msg = pair.server->recv();
    EnrollOutcome outcome = enroll_cave(*msg, w.cave_keys, policy, default_rows, cave_rng);
    out.record = std::move(outcome.record);
    pair.server->send(outcome.receipt);
  });
  out.vault = enroll_cas(w.user, w.ensemble, w.codec, w.key_bits, w.cave_keys.pk, w.cas_keys,
                         *pair.client, cas_rng, capture);
  server.join();
  return out;
}

/// Channel whose far end is a service handle() call; every request sent is
/// also kept so tests can replay raw messages.
template <typename Service>
class ServiceChannel : public Channel {
 public:
  explicit ServiceChannel(Service& service) : service_(service) {}

  void send(const Message& message) override {
    last_request = message;
    inbox_.push_back(service_.handle(message));
  }
  std::optional<Message> recv() override {
    if (inbox_.empty()) return std::nullopt;
    Message m = std::move(inbox_.front());
    inbox_.erase(inbox_.begin());
    return m;
  }

  Message last_request;

 private:
  Service& service_;
  std::vector<Message> inbox_;
};

/// One full verification round from the client side over any channel:
/// access request, answer (or echo a pre-forged response), verdict.
inline Verdict run_round(Channel& channel, const std::array<std::uint8_t, 32>& cave_pk,
                         const CasVault& vault, const LiveData& live, const BoxKeyPair& cas_keys,
                         Rng& rng,
                         const std::function<Response(const Challenge&)>& responder = nullptr) {
  AccessRequestPayload req{vault.uid_digest, vault.sealed_blob, cas_keys.pk};
  channel.send(Message{MessageType::AccessRequest,
                       seal(cave_pk, req.serialize(), rng).serialize()});
  std::optional<Message> reply = channel.recv();
  if (!reply) throw ProtocolError("channel closed");
  if (reply->type == MessageType::Error) {
    auto [reason, detail] = parse_error_message(*reply);
    throw ProtocolError(std::string(reject_reason_name(reason)) + ": " + detail);
  }
  Bytes plain = open(cas_keys, Envelope::deserialize(reply->payload));
  if (reply->type == MessageType::Verdict) return Verdict::deserialize(plain);

  Challenge challenge = Challenge::deserialize(plain);
  Response response = responder ? responder(challenge) : answer_challenge(challenge, vault, live);
  channel.send(Message{MessageType::Response,
                       seal(cave_pk, response.serialize(), rng).serialize()});
  std::optional<Message> verdict = channel.recv();
  if (!verdict) throw ProtocolError("channel closed");
  if (verdict->type == MessageType::Error) {
    auto [reason, detail] = parse_error_message(*verdict);
    throw ProtocolError(std::string(reject_reason_name(reason)) + ": " + detail);
  }
  return Verdict::deserialize(open(cas_keys, Envelope::deserialize(verdict->payload)));
}

}  // namespace caliper::testing
