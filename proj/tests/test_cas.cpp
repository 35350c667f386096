#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "caliper/cas.hpp"
#include "caliper/cave.hpp"
#include "helpers.hpp"

using namespace caliper;
using namespace caliper::testing;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& tag) {
  std::string dir = (fs::temp_directory_path() / ("caliper-cas-" + tag)).string();
  fs::remove_all(dir);
  return dir;
}

ClientConfig small_config(const std::string& dir, std::size_t keys = 1) {
  ClientConfig cfg;
  cfg.store_dir = dir;
  cfg.rows = 16;
  cfg.choices = 4;
  cfg.keys = keys;
  cfg.key_bits = 512;
  cfg.parity = 16;
  cfg.comparator_rows = 8;
  cfg.feature_modalities = 2;
  cfg.feature_dim = 4;
  cfg.sigma = 0.0;
  cfg.window = 4;
  cfg.seed = 7;
  return cfg;
}

CaveConfig cave_config(const std::string& dir, double decoy_prob = 0.0) {
  CaveConfig cfg;
  cfg.store_dir = dir;
  cfg.decoy_prob = decoy_prob;
  return cfg;
}

}  // namespace

TEST_CASE("sensor stream determinism, windows, and failover") {
  Rng seed_rng(3);
  ClientConfig cfg = small_config("");
  UserProfile profile = make_profile(cfg, seed_rng);
  REQUIRE(profile.modalities.size() == 2);

  SensorStream a(profile, 4, Rng(10));
  SensorStream b(profile, 4, Rng(10));
  LiveData la = a.poll(0, nullptr);
  LiveData lb = b.poll(0, nullptr);
  CHECK(la.feature_samples == lb.feature_samples);
  CHECK(la.feature_samples.begin()->second.size() == 4);

  SUBCASE("dropped modality yields no samples") {
    SensorStream s(profile, 4, Rng(11));
    s.drop(2);
    LiveData l = s.poll(0, nullptr);
    CHECK(l.feature_samples.count(2) == 0);
    CHECK(l.feature_samples.count(3) == 1);
  }
  SUBCASE("outage silences only its window") {
    SensorStream s(profile, 4, Rng(12));
    s.outage(2, 5, 10);
    CHECK(s.poll(4, nullptr).feature_samples.count(2) == 1);
    CHECK(s.poll(5, nullptr).feature_samples.count(2) == 0);
    CHECK(s.poll(9, nullptr).feature_samples.count(2) == 0);
    CHECK(s.poll(10, nullptr).feature_samples.count(2) == 1);
  }
}

TEST_CASE("cmd_enroll writes a reloadable store and guards overwrites") {
  std::string cave_dir = fresh_dir("enroll-cave");
  std::string cas_dir = fresh_dir("enroll-cas");
  CaveService svc(cave_config(cave_dir), Rng(100));
  ServiceChannel<CaveService> ch(svc);

  ClientConfig cfg = small_config(cas_dir, /*keys=*/2);
  ClientStore store = cmd_enroll(cfg, svc.public_key(), ch);
  REQUIRE(store.vaults.size() == 2);
  CHECK(store.next_slot == 0);
  CHECK(svc.store().records().size() == 2);

  ClientStore reloaded = ClientStore::load(cas_dir);
  CHECK(reloaded.uid == store.uid);
  CHECK(reloaded.vaults.size() == 2);
  CHECK(reloaded.vaults[0].serialize() == store.vaults[0].serialize());
  CHECK(reloaded.vaults[1].serialize() == store.vaults[1].serialize());
  CHECK(reloaded.image.data == store.image.data);
  CHECK(reloaded.profile.modalities.size() == store.profile.modalities.size());

  CHECK_THROWS_WITH_AS(cmd_enroll(cfg, svc.public_key(), ch), doctest::Contains("force"),
                       std::runtime_error);
}

TEST_CASE("genuine run accepts until rotation exhausts") {
  std::string cave_dir = fresh_dir("run-cave");
  CaveService svc(cave_config(cave_dir), Rng(200));
  ServiceChannel<CaveService> ch(svc);

  ClientConfig cfg = small_config("", /*keys=*/3);
  ClientStore store = cmd_enroll(cfg, svc.public_key(), ch);

  Rng run_rng(201);
  RunConfig run;  // run until exhausted
  RunStats stats = cmd_run(store, run, ch, run_rng);
  CHECK(stats.accepts == 3);
  CHECK(stats.rejects == 0);
  CHECK(stats.exhausted);
  CHECK(stats.rounds == 4);  // 3 accepts + the exhaustion report
  CHECK(store.next_slot == 3);
  REQUIRE(stats.transcript.size() == 4);
  CHECK(stats.transcript[0].find("verdict=Accept") != std::string::npos);
  CHECK(stats.transcript[3].find("reason=RotationExhausted") != std::string::npos);
}

TEST_CASE("impostor run never accepts and trips active authentication") {
  std::string cave_dir = fresh_dir("imp-cave");
  CaveService svc(cave_config(cave_dir), Rng(300));
  ServiceChannel<CaveService> ch(svc);
  ClientConfig cfg = small_config("", /*keys=*/1);
  ClientStore store = cmd_enroll(cfg, svc.public_key(), ch);

  SUBCASE("scripted operator keeps confirming") {
    Rng run_rng(301);
    RunConfig run;
    run.max_rounds = 10;
    run.impostor_seed = 4242;
    run.active_auth = [] { return true; };
    RunStats stats = cmd_run(store, run, ch, run_rng);
    CHECK(stats.accepts == 0);
    CHECK(stats.rounds == 10);
    CHECK(stats.decode_failures == 10);
    CHECK(stats.active_auth_prompts == 3);  // streak of 3, confirmed, repeat
  }
  SUBCASE("denied prompt stops the loop") {
    Rng run_rng(302);
    RunConfig run;
    run.max_rounds = 10;
    run.impostor_seed = 4242;
    run.active_auth = [] { return false; };
    RunStats stats = cmd_run(store, run, ch, run_rng);
    CHECK(stats.accepts == 0);
    CHECK(stats.rounds == 3);
    CHECK(stats.active_auth_prompts == 1);
    CHECK(stats.transcript.back().find("active-auth=denied") != std::string::npos);
  }
}

TEST_CASE("modality failover within RS tolerance still accepts") {
  std::string cave_dir = fresh_dir("drop-cave");
  CaveService svc(cave_config(cave_dir), Rng(400));
  ServiceChannel<CaveService> ch(svc);

  // 8 feature rows over 4 modalities: dropping one modality erases two
  // 6-byte fragments, 12 erasure symbols against a parity budget of 16.
  ClientConfig cfg = small_config("", /*keys=*/1);
  cfg.feature_modalities = 4;
  ClientStore store = cmd_enroll(cfg, svc.public_key(), ch);

  Rng run_rng(401);
  RunConfig run;
  run.max_rounds = 1;
  run.drop_modalities = {3};
  RunStats stats = cmd_run(store, run, ch, run_rng);
  CHECK(stats.accepts == 1);
}

TEST_CASE("attack simulations") {
  std::string cave_dir = fresh_dir("atk-cave");

  SUBCASE("replay of an accepted response is rejected") {
    CaveService svc(cave_config(cave_dir), Rng(500));
    ServiceChannel<CaveService> ch(svc);
    ClientStore store = cmd_enroll(small_config("", 2), svc.public_key(), ch);
    Rng rng(501);
    AttackReport report = cmd_attack(store, AttackMode::Replay, ch, rng);
    CHECK_FALSE(report.accepted);
    CHECK(report.reason == RejectReason::Replay);
  }
  SUBCASE("tampered blob is detected") {
    CaveService svc(cave_config(cave_dir), Rng(510));
    ServiceChannel<CaveService> ch(svc);
    ClientStore store = cmd_enroll(small_config("", 1), svc.public_key(), ch);
    Rng rng(511);
    AttackReport report = cmd_attack(store, AttackMode::Tamper, ch, rng);
    CHECK_FALSE(report.accepted);
    CHECK(report.reason == RejectReason::TamperDetected);
  }
  SUBCASE("cached key accepts a real challenge but a decoy flags intrusion") {
    CaveService svc(cave_config(cave_dir), Rng(520));
    ServiceChannel<CaveService> ch(svc);
    std::vector<SecretCapture> secrets;
    ClientStore store = cmd_enroll(small_config("", 2), svc.public_key(), ch, false, &secrets);
    REQUIRE(secrets.size() == 2);

    Rng rng(521);
    AttackReport real = cmd_attack(store, AttackMode::CachedKey, ch, rng, secrets[0].k_pr);
    CHECK(real.accepted);  // unconsumed key, genuine challenge: forgeable without decoys

    // now force decoys: the same adversary is caught immediately
    std::string decoy_dir = fresh_dir("atk-decoy");
    CaveService decoy_svc(cave_config(decoy_dir, /*decoy_prob=*/1.0), Rng(522));
    ServiceChannel<CaveService> dch(decoy_svc);
    std::vector<SecretCapture> decoy_secrets;
    ClientStore decoy_store =
        cmd_enroll(small_config("", 1), decoy_svc.public_key(), dch, false, &decoy_secrets);
    AttackReport caught =
        cmd_attack(decoy_store, AttackMode::CachedKey, dch, rng, decoy_secrets[0].k_pr);
    CHECK_FALSE(caught.accepted);
    CHECK(caught.reason == RejectReason::IntrusionFlag);
  }
}

TEST_CASE("fixed seeds reproduce the transcript and the verifier store byte for byte") {
  auto run_once = [](const std::string& tag) {
    std::string cave_dir = fresh_dir("det-cave-" + tag);
    CaveService svc(cave_config(cave_dir), Rng(600));
    ServiceChannel<CaveService> ch(svc);
    ClientStore store = cmd_enroll(small_config("", 2), svc.public_key(), ch);
    Rng run_rng(601);
    RunStats stats = cmd_run(store, RunConfig{}, ch, run_rng);
    std::ifstream in(svc.store().records_path(), std::ios::binary);
    std::string records((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return std::pair{stats.transcript, records};
  };
  auto first = run_once("a");
  auto second = run_once("b");
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
  CHECK_FALSE(first.second.empty());
}
