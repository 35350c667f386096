#include "caliper/cas.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "caliper/blocks.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace caliper {

// ----------------------------------------------------------- sensor stream

SensorStream::SensorStream(UserProfile profile, std::size_t window, Rng rng)
    : profile_(std::move(profile)), window_(window), rng_(std::move(rng)) {}

void SensorStream::drop(std::uint8_t mid) { dropped_.insert(mid); }

void SensorStream::outage(std::uint8_t mid, std::uint64_t from, std::uint64_t until) {
  outages_.emplace_back(mid, from, until);
}

LiveData SensorStream::poll(std::uint64_t now, const DeviceImage* image) {
  LiveData live;
  live.image = image;
  for (const auto& [mid, profile] : profile_.modalities) {
    if (dropped_.count(mid)) continue;
    bool silenced = std::any_of(outages_.begin(), outages_.end(), [&](const auto& o) {
      return std::get<0>(o) == mid && std::get<1>(o) <= now && now < std::get<2>(o);
    });
    if (silenced) continue;
    auto& samples = live.feature_samples[mid];
    for (std::size_t i = 0; i < window_; ++i) samples.push_back(draw_sample(profile, rng_));
  }
  return live;
}

// ------------------------------------------------------------ client store

UserProfile make_profile(const ClientConfig& config, Rng& rng) {
  UserProfile profile;
  for (std::size_t m = 0; m < config.feature_modalities; ++m) {
    ModalityProfile mp;
    mp.sigma = config.sigma;
    for (std::size_t d = 0; d < config.feature_dim; ++d)
      mp.mean.push_back(-2.0 + 4.0 * rng.uniform01());
    profile.modalities.emplace(static_cast<std::uint8_t>(kComparatorMid + 1 + m), std::move(mp));
  }
  return profile;
}

namespace {

std::vector<RowSpec> to_specs(const std::vector<BlockRow>& rows) {
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

}  // namespace

std::vector<RowSpec> build_ensemble(const ClientConfig& config, const DeviceImage& image,
                                    const UserProfile& profile, Rng& rng) {
  if (config.choices < 2) throw std::invalid_argument("ensemble needs at least two choices");
  std::size_t comparator = std::min(config.comparator_rows, config.rows);
  if (comparator < config.rows && profile.modalities.empty())
    throw std::invalid_argument("feature rows requested but no feature modalities");

  std::vector<RowSpec> ensemble = to_specs(
      make_block_ensemble(image, comparator, config.choices - 1, kComparatorMid, rng));

  PopulationParams pop;
  pop.dim = config.feature_dim;
  pop.feature_lo = -2.0;
  pop.feature_hi = 2.0;
  pop.threshold_lo = 0.05;
  pop.threshold_hi = 0.5;

  std::vector<std::uint8_t> mids;
  for (const auto& [mid, mp] : profile.modalities) mids.push_back(mid);

  for (std::size_t r = comparator; r < config.rows; ++r) {
    std::uint8_t mid = mids[(r - comparator) % mids.size()];
    const ModalityProfile& mp = profile.modalities.at(mid);
    std::vector<std::vector<double>> training;
    for (std::size_t i = 0; i < config.window; ++i) training.push_back(draw_sample(mp, rng));

    RowSpec spec;
    spec.mid = mid;
    spec.real_model_blob = train_feature_matcher(training, mid).serialize();
    for (std::size_t c = 0; c + 1 < config.choices; ++c)
      spec.chaff_model_blobs.push_back(generate_chaff(pop, mid, rng).serialize());
    ensemble.push_back(std::move(spec));
  }
  return ensemble;
}

namespace {

std::string manifest_path(const std::string& dir) { return dir + "/manifest.json"; }
std::string image_path(const std::string& dir) { return dir + "/image.bin"; }
std::string slot_path(const std::string& dir, std::size_t i) {
  return dir + "/slot" + std::to_string(i) + ".bin";
}

std::string hex32(const std::array<std::uint8_t, 32>& a) {
  return hex_encode(BytesView(a.data(), a.size()));
}

std::array<std::uint8_t, 32> unhex32(const std::string& h) {
  Bytes raw = hex_decode(h);
  if (raw.size() != 32) throw ParseError("bad key length in manifest");
  std::array<std::uint8_t, 32> a{};
  std::copy(raw.begin(), raw.end(), a.begin());
  return a;
}

void write_file(const std::string& path, BytesView data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read failed: " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Bytes(content.begin(), content.end());
}

}  // namespace

void ClientStore::save(const std::string& dir) const {
  fs::create_directories(dir);
  json profiles = json::object();
  for (const auto& [mid, mp] : profile.modalities)
    profiles[std::to_string(mid)] = json{{"mean", mp.mean}, {"sigma", mp.sigma}};
  json manifest{{"uid", uid},
                {"next_slot", next_slot},
                {"slots", vaults.size()},
                {"pk", hex32(keys.pk)},
                {"sk", hex32(keys.sk)},
                {"cave_pk", hex32(cave_pk)},
                {"block_size", image.block_size},
                {"window", window},
                {"profile", profiles}};
  std::ofstream out(manifest_path(dir), std::ios::binary | std::ios::trunc);
  out << manifest.dump(2) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("manifest write failed");
  write_file(image_path(dir), image.data);
  for (std::size_t i = 0; i < vaults.size(); ++i) write_file(slot_path(dir, i), vaults[i].serialize());
}

bool ClientStore::exists(const std::string& dir) { return fs::exists(manifest_path(dir)); }

ClientStore ClientStore::load(const std::string& dir) {
  std::ifstream in(manifest_path(dir), std::ios::binary);
  if (!in) throw std::runtime_error("no client store at " + dir);
  json manifest = json::parse(in);

  ClientStore store;
  store.uid = manifest.at("uid");
  store.next_slot = manifest.at("next_slot");
  store.keys.pk = unhex32(manifest.at("pk"));
  store.keys.sk = unhex32(manifest.at("sk"));
  store.cave_pk = unhex32(manifest.at("cave_pk"));
  store.image.block_size = manifest.at("block_size");
  store.window = manifest.at("window");
  for (const auto& [mid_str, mp_json] : manifest.at("profile").items()) {
    ModalityProfile mp;
    mp.mean = mp_json.at("mean").get<std::vector<double>>();
    mp.sigma = mp_json.at("sigma");
    store.profile.modalities.emplace(static_cast<std::uint8_t>(std::stoi(mid_str)),
                                     std::move(mp));
  }
  store.image.data = read_file(image_path(dir));
  std::size_t slots = manifest.at("slots");
  for (std::size_t i = 0; i < slots; ++i)
    store.vaults.push_back(CasVault::deserialize(read_file(slot_path(dir, i))));
  return store;
}

// -------------------------------------------------------------- operations

ClientStore cmd_enroll(const ClientConfig& config, const std::array<std::uint8_t, 32>& cave_pk,
                       Channel& channel, bool force,
                       std::vector<SecretCapture>* captures) {
  if (!config.store_dir.empty() && ClientStore::exists(config.store_dir) && !force)
    throw std::runtime_error("client store already exists; pass force to overwrite");

  Rng root(config.seed);
  Rng image_rng = root.fork("image");
  Rng profile_rng = root.fork("profile");
  Rng key_rng = root.fork("keys");

  ClientStore store;
  store.uid = config.uid;
  store.window = config.window;
  store.cave_pk = cave_pk;
  store.keys = BoxKeyPair::generate(key_rng);
  store.image.block_size = 64;
  store.image.data = image_rng.bytes(store.image.block_size *
                                     std::max<std::size_t>(64, config.comparator_rows * 4));
  store.profile = make_profile(config, profile_rng);

  UserContext user = UserContext::from_uid(config.uid);
  CodecParams codec = make_codec_params(config.key_bits / 8, config.parity, config.rows);

  for (std::size_t k = 0; k < config.keys; ++k) {
    Rng slot_rng = root.fork("slot-" + std::to_string(k));
    std::vector<RowSpec> ensemble = build_ensemble(config, store.image, store.profile, slot_rng);
    SecretCapture capture;
    store.vaults.push_back(enroll_cas(user, ensemble, codec, config.key_bits, cave_pk,
                                      store.keys, channel, slot_rng,
                                      captures ? &capture : nullptr));
    if (captures) captures->push_back(std::move(capture));
  }

  if (!config.store_dir.empty()) store.save(config.store_dir);
  return store;
}

namespace {

struct RoundOutcome {
  Verdict verdict;
  Message response_message;  // last Response frame sent, for replay attacks
  bool responded = false;
  std::size_t challenge_rows = 0;
};

RoundOutcome one_round(ClientStore& store, const CasVault& vault, Channel& channel, Rng& rng,
                       const std::function<Response(const Challenge&)>& responder) {
  RoundOutcome out;
  AccessRequestPayload req{vault.uid_digest, vault.sealed_blob, store.keys.pk};
  channel.send(Message{MessageType::AccessRequest,
                       seal(store.cave_pk, req.serialize(), rng).serialize()});
  std::optional<Message> reply = channel.recv();
  if (!reply) throw ProtocolError("verifier closed the channel");
  if (reply->type == MessageType::Error) {
    auto [reason, detail] = parse_error_message(*reply);
    throw ProtocolError(std::string(reject_reason_name(reason)) + ": " + detail);
  }
  Bytes plain = open(store.keys, Envelope::deserialize(reply->payload));
  if (reply->type == MessageType::Verdict) {
    out.verdict = Verdict::deserialize(plain);
    return out;
  }
  if (reply->type != MessageType::Challenge) throw ProtocolError("unexpected verifier message");

  Challenge challenge = Challenge::deserialize(plain);
  out.challenge_rows = challenge.rows.size();
  Response response = responder(challenge);
  out.response_message = Message{MessageType::Response,
                                 seal(store.cave_pk, response.serialize(), rng).serialize()};
  out.responded = true;
  channel.send(out.response_message);

  std::optional<Message> verdict_msg = channel.recv();
  if (!verdict_msg) throw ProtocolError("verifier closed the channel");
  if (verdict_msg->type == MessageType::Error) {
    auto [reason, detail] = parse_error_message(*verdict_msg);
    throw ProtocolError(std::string(reject_reason_name(reason)) + ": " + detail);
  }
  out.verdict = Verdict::deserialize(open(store.keys, Envelope::deserialize(verdict_msg->payload)));
  return out;
}

}  // namespace

RunStats cmd_run(ClientStore& store, const RunConfig& run, Channel& channel, Rng& rng) {
  if (store.vaults.empty()) throw std::runtime_error("run needs an enrolled store");
  RunStats stats;
  SessionLoopState loop;

  UserProfile profile = store.profile;
  if (run.impostor_seed != 0) {
    // A different person: same modality shape, foreign means.
    Rng foreign(run.impostor_seed);
    for (auto& [mid, mp] : profile.modalities)
      for (auto& v : mp.mean) v = -2.0 + 4.0 * foreign.uniform01();
  }
  SensorStream sensors(profile, store.window, rng.fork("sensors"));
  for (std::uint8_t mid : run.drop_modalities) sensors.drop(mid);

  // An impostor also sits at a different machine: comparator rows see a
  // foreign image.
  DeviceImage foreign_image;
  const DeviceImage* image = &store.image;
  if (run.impostor_seed != 0) {
    Rng foreign(run.impostor_seed + 1);
    foreign_image.block_size = store.image.block_size;
    foreign_image.data = foreign.bytes(store.image.data.size());
    image = &foreign_image;
  }

  while (run.max_rounds == 0 || stats.rounds < run.max_rounds) {
    const bool out_of_keys = store.next_slot >= store.vaults.size();
    // When every key is spent, one final request reports the exhaustion.
    const CasVault& vault = out_of_keys ? store.vaults.back() : store.vaults[store.next_slot];

    LiveData live = sensors.poll(loop.next_challenge_time, image);
    Bytes key_digest;
    RoundOutcome round = one_round(store, vault, channel, rng, [&](const Challenge& c) {
      return answer_challenge(c, vault, live, &key_digest);
    });
    if (!key_digest.empty()) stats.last_key_digest = std::move(key_digest);
    ++stats.rounds;
    ++loop.next_challenge_time;

    std::ostringstream line;
    line << "round=" << stats.rounds << " slot=" << store.next_slot
         << " rows=" << round.challenge_rows
         << " verdict=" << (round.verdict.accept ? "Accept" : "Reject")
         << " reason=" << reject_reason_name(round.verdict.reason);

    if (round.verdict.accept) {
      ++stats.accepts;
      ++store.next_slot;
      loop.consecutive_failures = 0;
      loop.active_auth_pending = false;
    } else if (round.verdict.reason == RejectReason::RotationExhausted) {
      stats.exhausted = true;
      stats.transcript.push_back(line.str());
      break;
    } else {
      ++stats.rejects;
      if (round.verdict.reason == RejectReason::DecodeFailure) ++stats.decode_failures;
      ++loop.consecutive_failures;
      if (loop.consecutive_failures >= run.active_auth_after && run.active_auth &&
          !loop.active_auth_pending) {
        loop.active_auth_pending = true;
        ++stats.active_auth_prompts;
        bool confirmed = run.active_auth();
        line << " active-auth=" << (confirmed ? "confirmed" : "denied");
        if (confirmed) {
          loop.consecutive_failures = 0;
          loop.active_auth_pending = false;
        } else {
          stats.transcript.push_back(line.str());
          break;  // operator failed the prompt: stop the session loop
        }
      }
    }
    stats.transcript.push_back(line.str());
  }
  return stats;
}

AttackReport cmd_attack(ClientStore& store, AttackMode mode, Channel& channel, Rng& rng,
                        BytesView stolen_k_pr) {
  AttackReport report;
  if (store.vaults.empty()) throw std::runtime_error("attack needs an enrolled store");
  const CasVault& vault = store.vaults[std::min(store.next_slot, store.vaults.size() - 1)];

  auto note = [&](const Verdict& v, const std::string& what) {
    report.accepted = v.accept;
    report.reason = v.reason;
    report.transcript.push_back("attack=" + what +
                                " verdict=" + (v.accept ? "Accept" : "Reject") +
                                " reason=" + reject_reason_name(v.reason));
  };

  switch (mode) {
    case AttackMode::Replay: {
      // Start from a legitimately accepted round, then re-send its response.
      SensorStream sensors(store.profile, store.window, rng.fork("sensors"));
      LiveData live = sensors.poll(0, &store.image);
      RoundOutcome honest = one_round(store, vault, channel, rng, [&](const Challenge& c) {
        return answer_challenge(c, vault, live);
      });
      if (honest.verdict.accept) ++store.next_slot;
      report.transcript.push_back(std::string("attack=replay setup-verdict=") +
                                  (honest.verdict.accept ? "Accept" : "Reject"));
      if (!honest.responded) throw std::runtime_error("no response captured to replay");
      channel.send(honest.response_message);
      std::optional<Message> reply = channel.recv();
      if (!reply) throw ProtocolError("verifier closed the channel");
      if (reply->type == MessageType::Error) {
        auto [reason, detail] = parse_error_message(*reply);
        note(Verdict{false, reason}, "replay");
      } else {
        note(Verdict::deserialize(open(store.keys, Envelope::deserialize(reply->payload))),
             "replay");
      }
      break;
    }
    case AttackMode::CachedKey: {
      if (stolen_k_pr.empty()) throw std::runtime_error("cached-key attack needs the stolen key");
      RoundOutcome round = one_round(store, vault, channel, rng, [&](const Challenge& c) {
        return forge_response_with_key(c, vault, stolen_k_pr);
      });
      if (round.verdict.accept) ++store.next_slot;
      note(round.verdict, "cached-key");
      break;
    }
    case AttackMode::Tamper: {
      CasVault bent = vault;
      bent.sealed_blob[bent.sealed_blob.size() / 2] ^= 0x01;
      RoundOutcome round = one_round(store, bent, channel, rng, [&](const Challenge& c) {
        return answer_challenge(c, bent, LiveData{});
      });
      note(round.verdict, "tamper");
      break;
    }
  }
  return report;
}

}  // namespace caliper
