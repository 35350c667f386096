#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>
#include <thread>

#include "caliper/transport.hpp"

using namespace caliper;

TEST_CASE("seal/open round trip, including empty payload") {
  Rng rng(1);
  auto kp = BoxKeyPair::generate(rng);
  CHECK(open(kp, seal(kp.pk, Bytes{}, rng)).empty());
  Bytes msg = to_bytes("server table goes here");
  CHECK(open(kp, seal(kp.pk, msg, rng)) == msg);
}

TEST_CASE("any single-bit flip in the ciphertext fails authentication") {
  Rng rng(2);
  auto kp = BoxKeyPair::generate(rng);
  Bytes msg = to_bytes("short");
  Envelope env = seal(kp.pk, msg, rng);
  for (std::size_t byte = 0; byte < env.ciphertext.size(); ++byte) {
    for (int bit = 0; bit < 8; ++bit) {
      Envelope bad = env;
      bad.ciphertext[byte] ^= static_cast<std::uint8_t>(1 << bit);
      CHECK_THROWS_AS(open(kp, bad), OpenFailure);
    }
  }
}

TEST_CASE("wrong recipient key cannot open; fresh ephemeral per seal") {
  Rng rng(3);
  auto kp1 = BoxKeyPair::generate(rng);
  auto kp2 = BoxKeyPair::generate(rng);
  Bytes msg = to_bytes("payload");
  Envelope env = seal(kp1.pk, msg, rng);
  CHECK_THROWS_AS(open(kp2, env), OpenFailure);

  Envelope again = seal(kp1.pk, msg, rng);
  CHECK(again.ciphertext != env.ciphertext);

  auto back = Envelope::deserialize(env.serialize());
  CHECK(open(kp1, back) == msg);
}

TEST_CASE("frame layout: empty Error message is the forced 10 bytes") {
  Message m{MessageType::Error, {}};
  CHECK(frame(m) == Bytes{0x43, 0x4c, 0x50, 0x52, 0x01, 0x07, 0x00, 0x00, 0x00, 0x00});
}

TEST_CASE("deframe(frame(m)) is identity over random messages") {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    Message m;
    m.type = static_cast<MessageType>(1 + rng.below(7));
    m.payload = rng.bytes(rng.below(2000));
    CHECK(deframe(frame(m)) == m);
  }
}

TEST_CASE("bad magic, bad version, lying length") {
  Message m{MessageType::Challenge, to_bytes("abc")};
  Bytes good = frame(m);

  Bytes bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deframe(bad_magic), ProtocolError);

  Bytes bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deframe(bad_version), ProtocolError);

  Bytes lying = good;
  lying[9] += 1;  // claims one more byte than present
  CHECK_THROWS_AS(deframe(lying), ProtocolError);

  Bytes extra = good;
  extra.push_back(0);
  CHECK_THROWS_AS(deframe(extra), ProtocolError);
}

TEST_CASE("frame reader resumes across partial reads") {
  Message a{MessageType::Challenge, to_bytes("first")};
  Message b{MessageType::Response, to_bytes("second")};
  Bytes stream = frame(a);
  Bytes fb = frame(b);
  stream.insert(stream.end(), fb.begin(), fb.end());

  FrameReader reader;
  std::vector<Message> got;
  for (std::size_t i = 0; i < stream.size(); i += 3) {
    std::size_t n = std::min<std::size_t>(3, stream.size() - i);
    reader.feed(BytesView(stream.data() + i, n));
    while (auto m = reader.poll()) got.push_back(*m);
  }
  REQUIRE(got.size() == 2);
  CHECK(got[0] == a);
  CHECK(got[1] == b);
}

TEST_CASE("nonce registry: no duplicates over many draws") {
  NonceRegistry reg;
  Rng rng(5);
  std::set<Nonce> seen;
  for (int i = 0; i < 100000; ++i) {
    Nonce n = reg.issue(rng, 0);
    CHECK(seen.insert(n).second);
  }
}

TEST_CASE("nonce expiry and retirement") {
  NonceRegistry reg(/*ttl_ticks=*/10);
  Rng rng(6);
  Nonce n = reg.issue(rng, 100);
  CHECK(reg.is_live(n, 105));
  CHECK_FALSE(reg.is_live(n, 110));  // expired
  reg.expire_before(110);
  CHECK(reg.live_count() == 0);

  Nonce n2 = reg.issue(rng, 200);
  reg.retire(n2);
  CHECK_FALSE(reg.is_live(n2, 201));
}

TEST_CASE("nonce registry survives save/load") {
  std::string path = "/tmp/caliper_nonce_test.txt";
  NonceRegistry reg(100);
  Rng rng(7);
  Nonce live = reg.issue(rng, 0);
  Nonce retired = reg.issue(rng, 0);
  reg.retire(retired);
  reg.save(path);

  NonceRegistry reloaded;
  reloaded.load(path);
  CHECK(reloaded.is_live(live, 50));
  CHECK_FALSE(reloaded.is_live(retired, 50));
  std::remove(path.c_str());
}

TEST_CASE("in-process pair delivers framed messages both ways") {
  std::vector<Bytes> captured;
  auto pair = make_inproc_pair(8, [&](BytesView b) { captured.emplace_back(b.begin(), b.end()); });
  Message req{MessageType::AccessRequest, to_bytes("hello")};
  pair.client->send(req);
  auto got = pair.server->recv();
  REQUIRE(got.has_value());
  CHECK(*got == req);

  Message resp{MessageType::Verdict, to_bytes("ok")};
  pair.server->send(resp);
  CHECK(*pair.client->recv() == resp);
  CHECK(captured.size() == 2);
  CHECK(captured[0] == frame(req));
}

TEST_CASE("socket channel round trip") {
  SocketServer server("127.0.0.1", 0);
  std::uint16_t port = server.port();

  std::thread srv([&] {
    auto ch = server.accept_one();
    REQUIRE(ch != nullptr);
    auto m = ch->recv();
    REQUIRE(m.has_value());
    ch->send(Message{MessageType::Verdict, m->payload});
  });

  SocketChannel client(dial("127.0.0.1", port));
  Rng rng(8);
  Message req{MessageType::AccessRequest, rng.bytes(10000)};
  client.send(req);
  auto echo = client.recv();
  REQUIRE(echo.has_value());
  CHECK(echo->type == MessageType::Verdict);
  CHECK(echo->payload == req.payload);
  srv.join();
}
