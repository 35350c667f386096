#include <cstdio>
#include <fstream>
#include <memory>

#include <CLI11.hpp>

#include "caliper/cas.hpp"
#include "caliper/cave.hpp"

using namespace caliper;

namespace {

/// In-process TCM mode: the verifier lives in the same address space and
/// the "channel" is a direct call into it.
class TcmChannel : public Channel {
 public:
  explicit TcmChannel(CaveService& service) : service_(service) {}
  void send(const Message& message) override { inbox_.push_back(service_.handle(message)); }
  std::optional<Message> recv() override {
    if (inbox_.empty()) return std::nullopt;
    Message m = std::move(inbox_.front());
    inbox_.erase(inbox_.begin());
    return m;
  }

 private:
  CaveService& service_;
  std::vector<Message> inbox_;
};

struct VerifierLink {
  std::unique_ptr<CaveService> tcm;
  std::unique_ptr<Channel> channel;
  std::array<std::uint8_t, 32> cave_pk{};
};

struct VerifierFlags {
  std::string cave_addr;
  std::string cave_pk_hex;
  std::string tcm_dir;
  std::uint64_t tcm_seed = 1;
  double decoy_prob = 0.0;
  std::uint64_t tcm_budget = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--cave", cave_addr, "verifier address host:port");
    cmd->add_option("--cave-pk", cave_pk_hex, "verifier public key (hex, socket mode)");
    cmd->add_option("--tcm", tcm_dir, "run the verifier in-process with this store dir");
    cmd->add_option("--tcm-seed", tcm_seed, "seed for the in-process verifier");
    cmd->add_option("--decoy-prob", decoy_prob, "in-process decoy probability");
    cmd->add_option("--tcm-budget", tcm_budget, "in-process TCM byte budget");
  }

  VerifierLink connect(const std::array<std::uint8_t, 32>* known_pk) const {
    VerifierLink link;
    if (!tcm_dir.empty()) {
      CaveConfig config;
      config.store_dir = tcm_dir;
      config.decoy_prob = decoy_prob;
      config.tcm_budget = tcm_budget;
      link.tcm = std::make_unique<CaveService>(config, Rng(tcm_seed));
      link.cave_pk = link.tcm->public_key();
      link.channel = std::make_unique<TcmChannel>(*link.tcm);
      return link;
    }
    if (cave_addr.empty()) throw std::runtime_error("need --cave ADDR or --tcm DIR");
    auto [host, port] = parse_host_port(cave_addr);
    link.channel = std::make_unique<SocketChannel>(dial(host, port));
    if (!cave_pk_hex.empty()) {
      Bytes pk = hex_decode(cave_pk_hex);
      if (pk.size() != 32) throw std::runtime_error("--cave-pk must be 32 bytes of hex");
      std::copy(pk.begin(), pk.end(), link.cave_pk.begin());
    } else if (known_pk) {
      link.cave_pk = *known_pk;
    } else {
      throw std::runtime_error("socket mode needs --cave-pk (printed by the verifier)");
    }
    return link;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caliper client: enrollment, continuous verification, adversary modes"};
  app.require_subcommand(1);

  std::string store_dir = "cas-store";
  app.add_option("--store", store_dir, "client store directory")->force_callback();

  // enroll
  auto* enroll = app.add_subcommand("enroll", "enroll rotation keys with the verifier");
  ClientConfig cfg;
  bool force = false;
  std::string capture_path;
  VerifierFlags enroll_link;
  enroll->add_option("--uid", cfg.uid, "user identifier");
  enroll->add_option("--rows", cfg.rows, "vault rows M");
  enroll->add_option("--choices", cfg.choices, "choices per row N");
  enroll->add_option("--keys", cfg.keys, "rotation keys to pre-enroll");
  enroll->add_option("--key-bits", cfg.key_bits, "RSA modulus bits");
  enroll->add_option("--parity", cfg.parity, "RS parity symbols per block");
  enroll->add_option("--seed", cfg.seed, "deterministic enrollment seed");
  enroll->add_option("--comparator-rows", cfg.comparator_rows, "block-hash comparator rows");
  enroll->add_option("--feature-modalities", cfg.feature_modalities, "feature modality count");
  enroll->add_option("--feature-dim", cfg.feature_dim, "feature vector dimension");
  enroll->add_option("--sigma", cfg.sigma, "within-user sample noise");
  enroll->add_option("--window", cfg.window, "live samples per modality");
  enroll->add_flag("--force", force, "overwrite an existing store");
  enroll->add_option("--capture-secrets", capture_path,
                     "INSECURE: write enrollment secrets (for attack demos)");
  enroll_link.attach(enroll);

  // run
  auto* run_cmd = app.add_subcommand("run", "continuous verification loop");
  RunConfig run;
  std::uint64_t run_seed = 1;
  std::vector<std::size_t> drops;
  std::string active_auth_mode = "none";
  VerifierFlags run_link;
  run_cmd->add_option("--rounds", run.max_rounds, "max rounds (0 = until keys exhaust)");
  run_cmd->add_option("--seed", run_seed, "run seed");
  run_cmd->add_option("--impostor-seed", run.impostor_seed,
                      "sample from a foreign profile with this seed");
  run_cmd->add_option("--drop-modality", drops, "modality ids to drop (failover)");
  run_cmd->add_option("--active-auth-after", run.active_auth_after,
                      "failure streak that triggers the prompt");
  run_cmd->add_option("--active-auth", active_auth_mode,
                      "scripted prompt outcome: yes, no, or none")
      ->check(CLI::IsMember({"yes", "no", "none"}));
  run_link.attach(run_cmd);

  // attack
  auto* attack = app.add_subcommand("attack", "adversary simulations");
  std::string mode_name;
  std::string key_hex;
  std::uint64_t attack_seed = 1;
  VerifierFlags attack_link;
  attack->add_option("mode", mode_name, "replay, cached-key, or tamper")
      ->required()
      ->check(CLI::IsMember({"replay", "cached-key", "tamper"}));
  attack->add_option("--key-hex", key_hex, "stolen private key for cached-key mode");
  attack->add_option("--seed", attack_seed, "attack seed");
  attack_link.attach(attack);

  // sizing
  auto* sizing = app.add_subcommand("sizing", "print the storage sizing report");
  std::size_t n = 4, m = 128, key_bits = 2048;
  std::uint64_t budget = 131072;
  sizing->add_option("--n", n, "choices per row");
  sizing->add_option("--m", m, "rows per key");
  sizing->add_option("--key-bits", key_bits, "public-key modulus bits");
  sizing->add_option("--budget", budget, "memory budget in bytes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sizing) {
      SizingParams p;
      p.choices = n;
      p.rows = m;
      p.key_pub_len = key_bits / 8;
      p.budget = budget;
      SizingReport r = sizing_report(p);
      std::printf("row_bytes=%llu\nkey_bytes=%llu\nkeys_in_budget=%llu\n",
                  static_cast<unsigned long long>(r.row_bytes),
                  static_cast<unsigned long long>(r.key_bytes),
                  static_cast<unsigned long long>(r.keys_in_budget));
      return 0;
    }

    if (*enroll) {
      cfg.store_dir = store_dir;
      VerifierLink link = enroll_link.connect(nullptr);
      std::vector<SecretCapture> captures;
      ClientStore store = cmd_enroll(cfg, link.cave_pk, *link.channel, force,
                                     capture_path.empty() ? nullptr : &captures);
      std::printf("enrolled keys=%zu rows=%zu choices=%zu store=%s\n", store.vaults.size(),
                  cfg.rows, cfg.choices, store_dir.c_str());
      for (std::size_t i = 0; i < store.vaults.size(); ++i)
        std::printf("slot=%zu sealed_blob_bytes=%zu vault_bytes=%zu\n", i,
                    store.vaults[i].sealed_blob.size(), store.vaults[i].serialize().size());
      if (!capture_path.empty()) {
        std::ofstream out(capture_path, std::ios::trunc);
        for (const auto& c : captures) out << hex_encode(c.k_pr) << '\n';
        std::printf("wrote %zu captured keys to %s (INSECURE)\n", captures.size(),
                    capture_path.c_str());
      }
      return 0;
    }

    ClientStore store = ClientStore::load(store_dir);

    if (*run_cmd) {
      for (std::size_t d : drops) run.drop_modalities.push_back(static_cast<std::uint8_t>(d));
      if (active_auth_mode == "yes") run.active_auth = [] { return true; };
      if (active_auth_mode == "no") run.active_auth = [] { return false; };
      VerifierLink link = run_link.connect(&store.cave_pk);
      store.cave_pk = link.cave_pk;
      Rng rng(run_seed);
      RunStats stats = cmd_run(store, run, *link.channel, rng);
      store.save(store_dir);  // remembers consumed slots
      for (const auto& line : stats.transcript) std::printf("%s\n", line.c_str());
      std::printf("rounds=%zu accepts=%zu rejects=%zu decode_failures=%zu prompts=%zu%s\n",
                  stats.rounds, stats.accepts, stats.rejects, stats.decode_failures,
                  stats.active_auth_prompts, stats.exhausted ? " rotation-exhausted" : "");
      if (stats.exhausted) {
        std::printf("all rotation keys consumed: re-enroll to continue\n");
        return 0;
      }
      return stats.accepts == stats.rounds ? 0 : 2;
    }

    if (*attack) {
      AttackMode mode = mode_name == "replay"      ? AttackMode::Replay
                        : mode_name == "cached-key" ? AttackMode::CachedKey
                                                    : AttackMode::Tamper;
      Bytes stolen;
      if (mode == AttackMode::CachedKey) {
        if (key_hex.empty()) throw std::runtime_error("cached-key needs --key-hex");
        stolen = hex_decode(key_hex);
      }
      VerifierLink link = attack_link.connect(&store.cave_pk);
      store.cave_pk = link.cave_pk;
      Rng rng(attack_seed);
      AttackReport report = cmd_attack(store, mode, *link.channel, rng, stolen);
      store.save(store_dir);
      for (const auto& line : report.transcript) std::printf("%s\n", line.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
