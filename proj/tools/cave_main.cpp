#include <cstdio>
#include <memory>

#include <CLI11.hpp>

#include "caliper/cave.hpp"

using namespace caliper;

int main(int argc, char** argv) {
  CLI::App app{"caliper verifier daemon and sizing calculator"};
  app.require_subcommand(1);

  // serve
  auto* serve = app.add_subcommand("serve", "run the verifier on a listen address");
  std::string listen = "127.0.0.1:7411";
  std::string store_path = "cave-store";
  double decoy_prob = 0.1;
  std::uint64_t tcm_budget = 0;
  std::uint64_t seed = 0;
  std::size_t max_connections = 0;
  serve->add_option("--listen", listen, "host:port to listen on");
  serve->add_option("--store", store_path, "record store directory");
  serve->add_option("--decoy-prob", decoy_prob, "per-request decoy probability")
      ->check(CLI::Range(0.0, 1.0));
  serve->add_option("--tcm-budget", tcm_budget, "TCM byte budget (0 = unenforced)");
  serve->add_option("--seed", seed, "deterministic seed (0 = system entropy)");
  serve->add_option("--max-connections", max_connections,
                    "serve this many connections then exit (0 = forever)");

  // sizing
  auto* sizing = app.add_subcommand("sizing", "print the storage sizing report");
  std::size_t n = 4, m = 128, key_bits = 2048, pad = 2, idx = 1, digest = 32;
  std::uint64_t budget = 131072;
  sizing->add_option("--n", n, "choices per row");
  sizing->add_option("--m", m, "rows per key");
  sizing->add_option("--key-bits", key_bits, "public-key modulus bits");
  sizing->add_option("--pad", pad, "pad fragment bytes per entry");
  sizing->add_option("--index", idx, "index bytes per entry");
  sizing->add_option("--digest", digest, "digest bytes per entry");
  sizing->add_option("--budget", budget, "memory budget in bytes");

  CLI11_PARSE(app, argc, argv);

  if (*sizing) {
    SizingParams p;
    p.choices = n;
    p.rows = m;
    p.pad_fragment_len = pad;
    p.index_len = idx;
    p.digest_len = digest;
    p.key_pub_len = key_bits / 8;
    p.uid_digest_len = 32;
    p.budget = budget;
    try {
      SizingReport r = sizing_report(p);
      std::printf("row_bytes=%llu\n", static_cast<unsigned long long>(r.row_bytes));
      std::printf("key_bytes=%llu\n", static_cast<unsigned long long>(r.key_bytes));
      std::printf("keys_in_budget=%llu\n", static_cast<unsigned long long>(r.keys_in_budget));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 1;
    }
    return 0;
  }

  try {
    CaveConfig config;
    config.store_dir = store_path;
    config.decoy_prob = decoy_prob;
    config.tcm_budget = tcm_budget;
    CaveService service(config, seed ? Rng(seed) : Rng());

    auto [host, port] = parse_host_port(listen);
    SocketServer server(host, port);
    std::printf("listening on %s:%u store=%s decoy-prob=%.3f budget=%llu\n", host.c_str(),
                server.port(), store_path.c_str(), decoy_prob,
                static_cast<unsigned long long>(tcm_budget));
    std::printf("public-key=%s\n",
                hex_encode(BytesView(service.public_key().data(), 32)).c_str());
    std::fflush(stdout);

    std::size_t served = 0;
    while (max_connections == 0 || served < max_connections) {
      std::unique_ptr<SocketChannel> channel = server.accept_one();
      if (!channel) break;
      service.serve_channel(*channel);
      ++served;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
