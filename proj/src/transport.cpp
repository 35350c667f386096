#include "caliper/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sodium.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>

namespace caliper {

// --------------------------------------------------------------- envelopes

BoxKeyPair BoxKeyPair::generate(Rng& rng) {
  Bytes seed = rng.bytes(crypto_box_SEEDBYTES);
  BoxKeyPair kp;
  crypto_box_seed_keypair(kp.pk.data(), kp.sk.data(), seed.data());
  secure_wipe(seed);
  return kp;
}

namespace {

// crypto_box_seal's nonce convention: blake2b(epk || rpk)
void seal_nonce(std::uint8_t out[crypto_box_NONCEBYTES], const std::uint8_t* epk,
                const std::uint8_t* rpk) {
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, crypto_box_NONCEBYTES);
  crypto_generichash_update(&st, epk, crypto_box_PUBLICKEYBYTES);
  crypto_generichash_update(&st, rpk, crypto_box_PUBLICKEYBYTES);
  crypto_generichash_final(&st, out, crypto_box_NONCEBYTES);
}

}  // namespace

Envelope seal(const std::array<std::uint8_t, 32>& recipient_pk, BytesView plaintext, Rng& rng) {
  Envelope env;
  env.recipient_key_id = sha256(BytesView(recipient_pk));

  // ephemeral key drawn from the caller's stream, so sealing is
  // reproducible under a fixed seed yet fresh per call
  Bytes seed = rng.bytes(crypto_box_SEEDBYTES);
  std::array<std::uint8_t, 32> esk;
  crypto_box_seed_keypair(env.ephemeral.data(), esk.data(), seed.data());
  secure_wipe(seed);

  std::uint8_t nonce[crypto_box_NONCEBYTES];
  seal_nonce(nonce, env.ephemeral.data(), recipient_pk.data());

  env.ciphertext.resize(plaintext.size() + crypto_box_MACBYTES);
  if (crypto_box_easy(env.ciphertext.data(), plaintext.data(), plaintext.size(), nonce,
                      recipient_pk.data(), esk.data()) != 0) {
    throw std::runtime_error("crypto_box_easy failed");
  }
  sodium_memzero(esk.data(), esk.size());
  return env;
}

Bytes open(const BoxKeyPair& keys, const Envelope& envelope) {
  if (envelope.recipient_key_id != sha256(BytesView(keys.pk)))
    throw OpenFailure("envelope sealed to a different key");
  if (envelope.ciphertext.size() < crypto_box_MACBYTES) throw OpenFailure("short ciphertext");

  std::uint8_t nonce[crypto_box_NONCEBYTES];
  seal_nonce(nonce, envelope.ephemeral.data(), keys.pk.data());

  Bytes plain(envelope.ciphertext.size() - crypto_box_MACBYTES);
  if (crypto_box_open_easy(plain.data(), envelope.ciphertext.data(), envelope.ciphertext.size(),
                           nonce, envelope.ephemeral.data(), keys.sk.data()) != 0) {
    throw OpenFailure("envelope authentication failed");
  }
  return plain;
}

Bytes Envelope::serialize() const {
  ByteWriter w;
  w.u8(1);
  w.field(BytesView(recipient_key_id));
  w.field(BytesView(ephemeral));
  w.field(ciphertext);
  return w.take();
}

Envelope Envelope::deserialize(BytesView data) {
  ByteReader r(data);
  if (r.u8() != 1) throw ParseError("unsupported envelope version");
  Envelope env;
  Bytes id = r.field();
  if (id.size() != kDigestLen) throw ParseError("bad key id length");
  std::copy(id.begin(), id.end(), env.recipient_key_id.begin());
  Bytes eph = r.field();
  if (eph.size() != 32) throw ParseError("bad ephemeral key length");
  std::copy(eph.begin(), eph.end(), env.ephemeral.begin());
  env.ciphertext = r.field();
  if (!r.done()) throw ParseError("trailing bytes in envelope");
  return env;
}

// ----------------------------------------------------------------- framing

Bytes frame(const Message& message) {
  Bytes out(kWireMagic.begin(), kWireMagic.end());
  out.push_back(kWireVersion);
  out.push_back(static_cast<std::uint8_t>(message.type));
  std::uint32_t len = static_cast<std::uint32_t>(message.payload.size());
  out.push_back(static_cast<std::uint8_t>(len >> 24));
  out.push_back(static_cast<std::uint8_t>(len >> 16));
  out.push_back(static_cast<std::uint8_t>(len >> 8));
  out.push_back(static_cast<std::uint8_t>(len));
  out.insert(out.end(), message.payload.begin(), message.payload.end());
  return out;
}

namespace {

constexpr std::size_t kHeaderLen = 10;

// returns bytes consumed, or 0 when more input is needed
std::size_t parse_frame(BytesView buf, Message& out) {
  if (buf.size() < kHeaderLen) return 0;
  if (!std::equal(kWireMagic.begin(), kWireMagic.end(), buf.begin()))
    throw ProtocolError("bad wire magic");
  if (buf[4] != kWireVersion) throw ProtocolError("unsupported wire version");
  std::uint8_t type = buf[5];
  if (type < 0x01 || type > 0x07) throw ProtocolError("unknown message type");
  std::uint32_t len = std::uint32_t(buf[6]) << 24 | std::uint32_t(buf[7]) << 16 |
                      std::uint32_t(buf[8]) << 8 | std::uint32_t(buf[9]);
  if (buf.size() < kHeaderLen + len) return 0;
  out.type = static_cast<MessageType>(type);
  out.payload.assign(buf.begin() + kHeaderLen, buf.begin() + kHeaderLen + len);
  return kHeaderLen + len;
}

}  // namespace

Message deframe(BytesView buffer) {
  Message m;
  std::size_t used = parse_frame(buffer, m);
  if (used == 0) throw ProtocolError("truncated frame");
  if (used != buffer.size()) throw ProtocolError("frame length mismatch");
  return m;
}

void FrameReader::feed(BytesView chunk) {
  buf_.insert(buf_.end(), chunk.begin(), chunk.end());
}

std::optional<Message> FrameReader::poll() {
  Message m;
  std::size_t used = parse_frame(buf_, m);
  if (used == 0) return std::nullopt;
  buf_.erase(buf_.begin(), buf_.begin() + used);
  return m;
}

// ------------------------------------------------------------------ nonces

Nonce NonceRegistry::issue(Rng& rng, std::uint64_t now) {
  for (;;) {
    Nonce n;
    rng.fill(n.data(), n.size());
    if (seen_.contains(n)) continue;  // never reuse within the session set
    seen_.insert(n);
    live_.emplace(n, now + ttl_);
    return n;
  }
}

bool NonceRegistry::is_live(const Nonce& nonce, std::uint64_t now) const {
  auto it = live_.find(nonce);
  return it != live_.end() && it->second > now;
}

void NonceRegistry::retire(const Nonce& nonce) {
  live_.erase(nonce);
}

void NonceRegistry::expire_before(std::uint64_t now) {
  for (auto it = live_.begin(); it != live_.end();) {
    if (it->second <= now) {
      it = live_.erase(it);
    } else {
      ++it;
    }
  }
}

void NonceRegistry::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write nonce registry: " + path);
  for (const auto& [n, expiry] : live_) {
    f << hex_encode(BytesView(n)) << " " << expiry << "\n";
  }
  for (const auto& n : seen_) {
    if (!live_.contains(n)) f << hex_encode(BytesView(n)) << " retired\n";
  }
}

void NonceRegistry::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) return;  // fresh start
  live_.clear();
  seen_.clear();
  std::string hex, tag;
  while (f >> hex >> tag) {
    Bytes raw = hex_decode(hex);
    if (raw.size() != kNonceLen) throw ParseError("corrupt nonce registry");
    Nonce n;
    std::copy(raw.begin(), raw.end(), n.begin());
    seen_.insert(n);
    if (tag != "retired") live_.emplace(n, std::stoull(tag));
  }
}

// ---------------------------------------------------------------- channels

namespace {

class InProcQueue {
 public:
  explicit InProcQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(Bytes framed) {
    std::unique_lock lk(mu_);
    not_full_.wait(lk, [&] { return q_.size() < capacity_ || closed_; });
    if (closed_) throw ProtocolError("channel closed");
    q_.push_back(std::move(framed));
    not_empty_.notify_one();
  }

  std::optional<Bytes> pop() {
    std::unique_lock lk(mu_);
    not_empty_.wait(lk, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    Bytes b = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return b;
  }

  void close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
  std::deque<Bytes> q_;
  std::size_t capacity_;
  bool closed_ = false;
};

class InProcChannel : public Channel {
 public:
  InProcChannel(std::shared_ptr<InProcQueue> out, std::shared_ptr<InProcQueue> in, WireTap tap)
      : out_(std::move(out)), in_(std::move(in)), tap_(std::move(tap)) {}

  ~InProcChannel() override {
    out_->close();
    in_->close();
  }

  void send(const Message& message) override {
    Bytes framed = frame(message);
    if (tap_) tap_(framed);
    out_->push(std::move(framed));
  }

  std::optional<Message> recv() override {
    auto framed = in_->pop();
    if (!framed) return std::nullopt;
    return deframe(*framed);
  }

 private:
  std::shared_ptr<InProcQueue> out_, in_;
  WireTap tap_;
};

}  // namespace

InProcPair make_inproc_pair(std::size_t capacity, WireTap tap) {
  auto a = std::make_shared<InProcQueue>(capacity);
  auto b = std::make_shared<InProcQueue>(capacity);
  InProcPair pair;
  pair.client = std::make_shared<InProcChannel>(a, b, tap);
  pair.server = std::make_shared<InProcChannel>(b, a, tap);
  return pair;
}

SocketChannel::~SocketChannel() {
  if (fd_ >= 0) ::close(fd_);
}

void SocketChannel::send(const Message& message) {
  Bytes framed = frame(message);
  if (tap_) tap_(framed);
  std::size_t off = 0;
  while (off < framed.size()) {
    ssize_t n = ::write(fd_, framed.data() + off, framed.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("socket write: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<Message> SocketChannel::recv() {
  for (;;) {
    if (auto m = reader_.poll()) return m;
    std::uint8_t buf[4096];
    ssize_t n = ::read(fd_, buf, sizeof(buf));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("socket read: ") + std::strerror(errno));
    }
    if (n == 0) return std::nullopt;  // peer closed
    reader_.feed(BytesView(buf, static_cast<std::size_t>(n)));
  }
}

int dial(const std::string& host, std::uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw ProtocolError("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw ProtocolError("bad address: " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw ProtocolError("connect failed: " + host);
  }
  return fd;
}

SocketServer::SocketServer(const std::string& host, std::uint16_t port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw ProtocolError("socket() failed");
  int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw ProtocolError("bad listen address: " + host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    throw ProtocolError("bind failed");
  if (::listen(listen_fd_, 16) != 0) throw ProtocolError("listen failed");
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

SocketServer::~SocketServer() {
  close();
}

std::unique_ptr<SocketChannel> SocketServer::accept_one(WireTap tap) {
  int fd = ::accept(listen_fd_, nullptr, nullptr);
  if (fd < 0) return nullptr;
  return std::make_unique<SocketChannel>(fd, std::move(tap));
}

void SocketServer::close() {
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
}

std::pair<std::string, std::uint16_t> parse_host_port(const std::string& addr) {
  auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("expected host:port, got " + addr);
  return {addr.substr(0, colon), static_cast<std::uint16_t>(std::stoi(addr.substr(colon + 1)))};
}

}  // namespace caliper
