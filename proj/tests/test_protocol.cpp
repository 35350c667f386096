#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"

using namespace caliper;
using namespace caliper::testing;

TEST_CASE("wire payloads round-trip") {
  Rng rng(7);

  Challenge c;
  rng.fill(c.challenge_id.data(), c.challenge_id.size());
  rng.fill(c.n2.data(), c.n2.size());
  for (int r = 0; r < 3; ++r) {
    std::vector<ChallengeRowEntry> row(4);
    for (auto& e : row) {
      Bytes h = rng.bytes(32);
      std::copy(h.begin(), h.end(), e.h2.begin());
      e.pad_fragment = rng.bytes(6);
    }
    c.rows.push_back(row);
  }
  Challenge c2 = Challenge::deserialize(c.serialize());
  CHECK(c2.challenge_id == c.challenge_id);
  CHECK(c2.n2 == c.n2);
  REQUIRE(c2.rows.size() == 3);
  CHECK(c2.rows[1][2].h2 == c.rows[1][2].h2);
  CHECK(c2.rows[2][3].pad_fragment == c.rows[2][3].pad_fragment);

  Response resp;
  resp.challenge_id = c.challenge_id;
  resp.n2 = c.n2;
  resp.status = ResponseStatus::Signature;
  resp.signature = rng.bytes(64);
  resp.guess_vector = std::vector<std::uint8_t>{1, 0, 3};
  Response resp2 = Response::deserialize(resp.serialize());
  CHECK(resp2.status == ResponseStatus::Signature);
  CHECK(resp2.signature == resp.signature);
  CHECK(resp2.guess_vector == resp.guess_vector);

  Response bare;
  bare.status = ResponseStatus::DecodeFailure;
  CHECK_FALSE(Response::deserialize(bare.serialize()).guess_vector.has_value());

  Verdict v{true, RejectReason::None};
  CHECK(Verdict::deserialize(v.serialize()) == v);
  Verdict rej{false, RejectReason::IntrusionFlag};
  CHECK(Verdict::deserialize(rej.serialize()) == rej);

  CHECK_THROWS_AS(Challenge::deserialize(Bytes{9, 9, 9}), ParseError);
}

TEST_CASE("error messages carry reason and detail") {
  Message m = make_error_message(RejectReason::BudgetExceeded, "tcm full");
  auto [reason, detail] = parse_error_message(m);
  CHECK(reason == RejectReason::BudgetExceeded);
  CHECK(detail == "tcm full");
  CHECK(std::string(reject_reason_name(RejectReason::Replay)) == "Replay");
}

TEST_CASE("update_policy rules") {
  PolicyConfig cfg;
  cfg.min_rows = 4;
  cfg.interval_min = 5;
  cfg.interval_max = 600;

  SUBCASE("full-correct run relaxes: (30 s, 32 rows) -> (60 s, 16 rows)") {
    PolicyState s{32, 30, 0};
    PolicyState out = update_policy(s, cfg, 64, 10, 10);
    CHECK(out.interval_next == 60);
    CHECK(out.challenge_rows_next == 16);
  }
  SUBCASE("all-wrong run tightens to the floor") {
    PolicyState s{8, 120, 0};
    PolicyState out = update_policy(s, cfg, 64, 0, 10);
    CHECK(out.interval_next == cfg.interval_min);
    CHECK(out.challenge_rows_next == 64);
  }
  SUBCASE("dead band leaves state unchanged") {
    PolicyState s{8, 120, 2};
    PolicyState out = update_policy(s, cfg, 64, 7, 10);
    CHECK(out.interval_next == 120);
    CHECK(out.challenge_rows_next == 8);
    CHECK(out.failure_streak == 2);
  }
  SUBCASE("relaxation clamps at interval_max and min_rows") {
    PolicyState s{4, 500, 0};
    PolicyState out = update_policy(s, cfg, 64, 10, 10);
    CHECK(out.interval_next == 600);
    CHECK(out.challenge_rows_next == 4);
  }
  SUBCASE("correct > total rejected") {
    CHECK_THROWS_AS(update_policy(PolicyState{4, 5, 0}, cfg, 64, 3, 2), std::invalid_argument);
  }
  SUBCASE("no guesses leaves state unchanged apart from clamping") {
    PolicyState s{8, 120, 1};
    PolicyState out = update_policy(s, cfg, 64, 0, 0);
    CHECK(out.challenge_rows_next == 8);
    CHECK(out.interval_next == 120);
  }
}

TEST_CASE("enrollment round trip and receipt echo") {
  Rng rng(11);
  World w = make_world(rng);
  Rng cas_rng(100), cave_rng(200);
  EnrollResult e = enroll_pair(w, cas_rng, cave_rng);

  CHECK(e.record.uid_digest == w.user.uid_digest);
  CHECK(e.record.k_pu == e.vault.k_pu);
  CHECK_FALSE(e.record.consumed);
  CHECK(e.record.stored_hash == sha256(e.vault.sealed_blob));
  CHECK(e.vault.client_table.rows.size() == 16 * 4);
  CHECK(e.vault.fragment_slot.size() == 16 * 4);

  // vault state survives its own serialization
  CasVault v2 = CasVault::deserialize(e.vault.serialize());
  CHECK(v2.serialize() == e.vault.serialize());
  CHECK(v2.sealed_blob == e.vault.sealed_blob);
}

TEST_CASE("challenge rotation: stored index recovers every shift") {
  Rng rng(13);
  World w = make_world(rng);
  Rng cas_rng(1), cave_rng(2);
  EnrollResult e = enroll_pair(w, cas_rng, cave_rng);

  NonceRegistry nonces;
  Rng chal_rng(3);
  // Many sessions so all shift values 0..3 appear, identity rotation included.
  std::set<std::uint8_t> seen;
  for (int trial = 0; trial < 8; ++trial) {
    ChallengeSession s = make_challenge(e.record, e.vault.sealed_blob, w.cave_keys, chal_rng,
                                        nonces, trial);
    REQUIRE(s.challenge.rows.size() == s.perm.shifts.size());
    for (std::size_t r = 0; r < s.challenge.rows.size(); ++r) {
      const auto& row = s.challenge.rows[r];
      const std::size_t n = row.size();
      for (std::size_t p = 0; p < n; ++p) {
        // entry at challenge column p came from original column (p - s) mod n,
        // which is exactly its stored choice_index
        std::uint8_t i = e.vault.client_table.rows.at(row[p].h2).choice_index;
        CHECK((p + n - i) % n == s.perm.shifts[r]);
      }
      seen.insert(s.perm.shifts[r]);
    }
  }
  CHECK(seen == std::set<std::uint8_t>{0, 1, 2, 3});
}

TEST_CASE("honest full flow accepts and recovers every shift") {
  Rng rng(17);
  World w = make_world(rng);
  Rng cas_rng(4), cave_rng(5);
  EnrollResult e = enroll_pair(w, cas_rng, cave_rng);

  NonceRegistry nonces;
  Rng chal_rng(6);
  ChallengeSession session =
      make_challenge(e.record, e.vault.sealed_blob, w.cave_keys, chal_rng, nonces, 0);
  CHECK(session.challenge.rows.size() == 16);

  Response resp = answer_challenge(session.challenge, e.vault, w.live);
  REQUIRE(resp.status == ResponseStatus::Signature);
  REQUIRE(resp.guess_vector.has_value());
  CHECK(*resp.guess_vector == session.perm.shifts);

  PolicyConfig cfg;
  Verdict v = verify_response(e.record, session, resp, cfg, 16, nonces, 0);
  CHECK(v.accept);
  CHECK(v.reason == RejectReason::None);
  CHECK(e.record.consumed);
  CHECK(e.record.policy.failure_streak == 0);

  SUBCASE("identical response re-sent is a replay") {
    Verdict again = verify_response(e.record, session, resp, cfg, 16, nonces, 0);
    CHECK_FALSE(again.accept);
    CHECK(again.reason == RejectReason::Replay);
  }
  SUBCASE("response against a foreign session has no session") {
    ChallengeSession other =
        make_challenge(EnrollmentRecord{e.record.uid_digest, e.record.k_pu, e.record.stored_hash,
                                        e.record.policy, false},
                       e.vault.sealed_blob, w.cave_keys, chal_rng, nonces, 0);
    Verdict none = verify_response(e.record, other, resp, cfg, 16, nonces, 0);
    CHECK(none.reason == RejectReason::NoSession);
  }
}

TEST_CASE("one shift off in the retained perm rejects the signature") {
  Rng rng(19);
  World w = make_world(rng);
  Rng cas_rng(7), cave_rng(8);
  EnrollResult e = enroll_pair(w, cas_rng, cave_rng);

  NonceRegistry nonces;
  Rng chal_rng(9);
  ChallengeSession session =
      make_challenge(e.record, e.vault.sealed_blob, w.cave_keys, chal_rng, nonces, 0);
  Response resp = answer_challenge(session.challenge, e.vault, w.live);
  REQUIRE(resp.status == ResponseStatus::Signature);

  ChallengeSession skewed = session;
  skewed.perm.shifts[0] = static_cast<std::uint8_t>((skewed.perm.shifts[0] + 1) % 4);
  PolicyConfig cfg;
  Verdict v = verify_response(e.record, skewed, resp, cfg, 16, nonces, 0);
  CHECK_FALSE(v.accept);
  CHECK(v.reason == RejectReason::BadSignature);
  CHECK_FALSE(e.record.consumed);
  CHECK(e.record.policy.failure_streak == 1);
}

TEST_CASE("impostor image fails to decode") {
  Rng rng(23);
  World w = make_world(rng);
  Rng cas_rng(10), cave_rng(11);
  EnrollResult e = enroll_pair(w, cas_rng, cave_rng);

  Rng imp_rng(999);
  DeviceImage wrong = make_image(imp_rng);
  LiveData impostor;
  impostor.image = &wrong;

  NonceRegistry nonces;
  Rng chal_rng(12);
  PolicyConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    EnrollmentRecord rec = e.record;
    ChallengeSession session =
        make_challenge(rec, e.vault.sealed_blob, w.cave_keys, chal_rng, nonces, trial);
    Response resp = answer_challenge(session.challenge, e.vault, impostor);
    CHECK(resp.status == ResponseStatus::DecodeFailure);
    Verdict v = verify_response(rec, session, resp, cfg, 16, nonces, trial);
    CHECK_FALSE(v.accept);
    CHECK(v.reason == RejectReason::DecodeFailure);
    CHECK_FALSE(rec.consumed);
    CHECK(rec.policy.failure_streak == 1);
    CHECK(rec.policy.challenge_rows_next == 16);  // tightened to full table
  }
}

TEST_CASE("decoy challenges") {
  Rng rng(29);
  World w = make_world(rng);
  Rng cas_rng(13), cave_rng(14);
  SecretCapture secrets;
  EnrollResult e = enroll_pair(w, cas_rng, cave_rng, {}, SIZE_MAX, &secrets);
  REQUIRE(secrets.k_pr.size() == 64);

  NonceRegistry nonces;
  Rng chal_rng(15);
  PolicyConfig cfg;

  SUBCASE("honest client reports decode failure; record stays healthy") {
    ChallengeSession decoy =
        make_decoy_challenge(e.record, e.vault.sealed_blob, w.cave_keys, chal_rng, nonces, 0);
    Response resp = answer_challenge(decoy.challenge, e.vault, w.live);
    CHECK(resp.status == ResponseStatus::DecodeFailure);
    Verdict v = verify_response(e.record, decoy, resp, cfg, 16, nonces, 0);
    CHECK_FALSE(v.accept);
    CHECK(v.reason == RejectReason::DecodeFailure);
    CHECK_FALSE(e.record.consumed);
    // healthy outcome: no policy penalty for a decoy
    CHECK(e.record.policy.failure_streak == 0);
  }
  SUBCASE("cached-key adversary answers a decoy and is flagged") {
    ChallengeSession decoy =
        make_decoy_challenge(e.record, e.vault.sealed_blob, w.cave_keys, chal_rng, nonces, 0);
    Response forged = forge_response_with_key(decoy.challenge, e.vault, secrets.k_pr);
    CHECK(forged.status == ResponseStatus::Signature);
    Verdict v = verify_response(e.record, decoy, forged, cfg, 16, nonces, 0);
    CHECK_FALSE(v.accept);
    CHECK(v.reason == RejectReason::IntrusionFlag);
    CHECK_FALSE(e.record.consumed);
  }
  SUBCASE("real and decoy challenges share a wire shape") {
    ChallengeSession real =
        make_challenge(e.record, e.vault.sealed_blob, w.cave_keys, chal_rng, nonces, 0);
    ChallengeSession decoy =
        make_decoy_challenge(e.record, e.vault.sealed_blob, w.cave_keys, chal_rng, nonces, 0);
    CHECK(real.challenge.serialize().size() == decoy.challenge.serialize().size());
  }
}

TEST_CASE("tampered blob and consumed record are rejected before any challenge") {
  Rng rng(31);
  World w = make_world(rng);
  Rng cas_rng(16), cave_rng(17);
  EnrollResult e = enroll_pair(w, cas_rng, cave_rng);

  NonceRegistry nonces;
  Rng chal_rng(18);

  Bytes bad = e.vault.sealed_blob;
  bad[bad.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(make_challenge(e.record, bad, w.cave_keys, chal_rng, nonces, 0),
                  TamperDetected);

  e.record.consumed = true;
  CHECK_THROWS_AS(make_challenge(e.record, e.vault.sealed_blob, w.cave_keys, chal_rng, nonces, 0),
                  KeyConsumed);
}

TEST_CASE("missing modality rows become erasures within codec tolerance") {
  Rng rng(37);
  World w = make_world(rng);
  // Replace two rows with feature-threshold rows of a modality that will
  // have no live samples at answer time.
  Rng feat_rng(777);
  std::vector<std::vector<double>> samples;
  for (int i = 0; i < 8; ++i)
    samples.push_back({1.0 + 0.001 * i, 2.0 - 0.001 * i});
  MatcherModel ft = train_feature_matcher(samples, /*mid=*/2);
  PopulationParams pop;
  pop.dim = 2;
  pop.feature_lo = -4.0;
  pop.feature_hi = 4.0;
  pop.threshold_lo = 0.5;
  pop.threshold_hi = 2.0;
  for (std::size_t r = 0; r < 2; ++r) {
    RowSpec spec;
    spec.real_model_blob = ft.serialize();
    spec.mid = 2;
    for (std::size_t c = 0; c + 1 < 4; ++c)
      spec.chaff_model_blobs.push_back(generate_chaff(pop, 2, feat_rng).serialize());
    w.ensemble[r] = spec;
  }

  Rng cas_rng(19), cave_rng(20);
  EnrollResult e = enroll_pair(w, cas_rng, cave_rng);
  NonceRegistry nonces;
  Rng chal_rng(21);
  ChallengeSession session =
      make_challenge(e.record, e.vault.sealed_blob, w.cave_keys, chal_rng, nonces, 0);

  // live data has the image but no mid=2 samples: those rows are erasures
  Response resp = answer_challenge(session.challenge, e.vault, w.live);
  // codec: 96-byte codeword, 16 parity, one block; 2 erased 6-byte
  // fragments cost 12 erasure symbols, within the budget of 16
  CHECK(resp.status == ResponseStatus::Signature);
  PolicyConfig cfg;
  Verdict v = verify_response(e.record, session, resp, cfg, 16, nonces, 0);
  CHECK(v.accept);
}
