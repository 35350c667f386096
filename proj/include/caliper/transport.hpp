#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>

#include "caliper/bytes.hpp"
#include "caliper/crypto.hpp"

namespace caliper {

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OpenFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --------------------------------------------------------------- envelopes

/// X25519 keypair for sealed envelopes.
struct BoxKeyPair {
  std::array<std::uint8_t, 32> pk{};
  std::array<std::uint8_t, 32> sk{};

  static BoxKeyPair generate(Rng& rng);
};

/// Hybrid sealed envelope: an ephemeral X25519 key agreed against the
/// recipient's public key wraps an authenticated stream cipher over the
/// payload. Opening with the wrong key or any tampered byte fails.
struct Envelope {
  Digest recipient_key_id{};                  // sha256 of recipient public key
  std::array<std::uint8_t, 32> ephemeral{};   // sender's ephemeral public key
  Bytes ciphertext;                           // payload + auth tag

  Bytes serialize() const;
  static Envelope deserialize(BytesView data);
};

Envelope seal(const std::array<std::uint8_t, 32>& recipient_pk, BytesView plaintext, Rng& rng);
Bytes open(const BoxKeyPair& keys, const Envelope& envelope);

// ----------------------------------------------------------------- framing

enum class MessageType : std::uint8_t {
  EnrollRequest = 0x01,
  EnrollReceipt = 0x02,
  AccessRequest = 0x03,
  Challenge = 0x04,
  Response = 0x05,
  Verdict = 0x06,
  Error = 0x07,
};

struct Message {
  MessageType type = MessageType::Error;
  Bytes payload;

  bool operator==(const Message&) const = default;
};

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::array<std::uint8_t, 4> kWireMagic = {'C', 'L', 'P', 'R'};

Bytes frame(const Message& message);
/// Parses one complete frame; throws ProtocolError when the buffer is not
/// exactly one well-formed frame.
Message deframe(BytesView buffer);

/// Incremental deframer for stream transports: feed arbitrary chunks,
/// poll complete messages out.
class FrameReader {
 public:
  void feed(BytesView chunk);
  std::optional<Message> poll();

 private:
  Bytes buf_;
};

// ------------------------------------------------------------------ nonces

inline constexpr std::size_t kNonceLen = 16;
using Nonce = std::array<std::uint8_t, kNonceLen>;

/// Live-nonce registry with logical-clock expiry. Persistable so replay
/// protection survives a service restart.
class NonceRegistry {
 public:
  explicit NonceRegistry(std::uint64_t ttl_ticks = 1024) : ttl_(ttl_ticks) {}

  Nonce issue(Rng& rng, std::uint64_t now);
  bool is_live(const Nonce& nonce, std::uint64_t now) const;
  void retire(const Nonce& nonce);
  void expire_before(std::uint64_t now);
  std::size_t live_count() const { return live_.size(); }

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  std::uint64_t ttl_;
  std::map<Nonce, std::uint64_t> live_;  // nonce -> expiry tick
  std::set<Nonce> seen_;                 // every nonce ever issued
};

// ---------------------------------------------------------------- channels

/// Bidirectional message channel. Both backends move the same framed bytes
/// so the in-process path exercises the wire code.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send(const Message& message) = 0;
  virtual std::optional<Message> recv() = 0;
};

/// Copies every framed byte string that crosses a channel; the privacy
/// acceptance scan reads these captures.
using WireTap = std::function<void(BytesView)>;

struct InProcPair {
  std::shared_ptr<Channel> client;
  std::shared_ptr<Channel> server;
};

InProcPair make_inproc_pair(std::size_t capacity = 64, WireTap tap = nullptr);

/// Blocking stream-socket channel over a connected fd; owns the fd.
class SocketChannel : public Channel {
 public:
  explicit SocketChannel(int fd, WireTap tap = nullptr) : fd_(fd), tap_(std::move(tap)) {}
  ~SocketChannel() override;
  void send(const Message& message) override;
  std::optional<Message> recv() override;

 private:
  int fd_;
  WireTap tap_;
  FrameReader reader_;
};

int dial(const std::string& host, std::uint16_t port);

class SocketServer {
 public:
  SocketServer(const std::string& host, std::uint16_t port);
  ~SocketServer();
  std::uint16_t port() const { return port_; }
  /// Blocks for one connection; returns nullptr when the server is closed.
  std::unique_ptr<SocketChannel> accept_one(WireTap tap = nullptr);
  void close();

 private:
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
};

std::pair<std::string, std::uint16_t> parse_host_port(const std::string& addr);

}  // namespace caliper
