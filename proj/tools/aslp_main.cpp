#include <cstdio>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "caliper/aslp.hpp"
#include "caliper/bytes.hpp"
#include "caliper/cas.hpp"
#include "caliper/cave.hpp"

using namespace caliper;

namespace {

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string& s = buf.str();
  return Bytes(s.begin(), s.end());
}

void write_file(const std::string& path, BytesView data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
}

/// Runs one verification round against an in-process verifier and returns
/// the digest of the decoded private key as the personalization key.
Bytes key_from_protocol(const std::string& cas_store, const std::string& tcm_dir,
                        std::uint64_t tcm_seed, std::uint64_t run_seed) {
  ClientStore store = ClientStore::load(cas_store);
  CaveConfig config;
  config.store_dir = tcm_dir;
  config.decoy_prob = 0.0;  // this round must release the key, not probe
  CaveService cave(config, Rng(tcm_seed));
  store.cave_pk = cave.public_key();

  struct DirectChannel : Channel {
    explicit DirectChannel(CaveService& s) : service(s) {}
    void send(const Message& m) override { inbox.push_back(service.handle(m)); }
    std::optional<Message> recv() override {
      if (inbox.empty()) return std::nullopt;
      Message m = std::move(inbox.front());
      inbox.erase(inbox.begin());
      return m;
    }
    CaveService& service;
    std::vector<Message> inbox;
  } channel(cave);

  RunConfig run;
  run.max_rounds = 1;
  Rng rng(run_seed);
  RunStats stats = cmd_run(store, run, channel, rng);
  store.save(cas_store);
  if (stats.accepts != 1 || stats.last_key_digest.empty())
    throw std::runtime_error("verification round did not accept; no key released");
  return stats.last_key_digest;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"address-space layout personalization for segmented images"};
  app.require_subcommand(1);

  std::string image_path, out_path, key_hex;
  std::string from_store, tcm_dir = "cave-store";
  std::uint64_t tcm_seed = 1, run_seed = 1;

  auto add_key_flags = [&](CLI::App* cmd) {
    cmd->add_option("--key-hex", key_hex, "personalization key as hex");
    cmd->add_option("--from-protocol", from_store,
                    "derive the key from a verification round using this client store");
    cmd->add_option("--tcm", tcm_dir, "in-process verifier store dir (with --from-protocol)");
    cmd->add_option("--tcm-seed", tcm_seed, "in-process verifier seed");
    cmd->add_option("--run-seed", run_seed, "verification round seed");
  };

  auto* pack_cmd = app.add_subcommand("pack", "pack raw segment files into a container");
  std::vector<std::string> segment_paths;
  pack_cmd->add_option("--out", out_path, "output container path")->required();
  pack_cmd->add_option("segments", segment_paths, "segment files in canonical order")
      ->required();

  auto* pers = app.add_subcommand("personalize", "permute a canonical container under a key");
  pers->add_option("--image", image_path, "canonical container")->required();
  pers->add_option("--out", out_path, "personalized output")->required();
  add_key_flags(pers);

  auto* load_cmd = app.add_subcommand("load", "reassemble a personalized container");
  load_cmd->add_option("--image", image_path, "personalized container")->required();
  load_cmd->add_option("--out", out_path, "write the canonical container here (optional)");
  add_key_flags(load_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pack_cmd) {
      SegmentedImage image;
      for (const auto& p : segment_paths) image.segments.push_back(read_file(p));
      Bytes container = pack(image);
      write_file(out_path, container);
      std::printf("packed segments=%zu bytes=%zu checksum=%s\n", image.segments.size(),
                  container.size(), hex_encode(image.checksum()).c_str());
      return 0;
    }

    Bytes key;
    if (!key_hex.empty())
      key = hex_decode(key_hex);
    else if (!from_store.empty())
      key = key_from_protocol(from_store, tcm_dir, tcm_seed, run_seed);
    else
      throw std::runtime_error("need --key-hex or --from-protocol");

    Bytes container = read_file(image_path);

    if (*pers) {
      Bytes out = personalize(container, key);
      write_file(out_path, out);
      std::printf("personalized bytes=%zu key=%s\n", out.size(), hex_encode(key).c_str());
      return 0;
    }

    // load
    SegmentedImage canonical = load(container, key);
    std::printf("loaded segments=%zu checksum=%s\n", canonical.segments.size(),
                hex_encode(canonical.checksum()).c_str());
    if (!out_path.empty()) write_file(out_path, pack(canonical));
    return 0;
  } catch (const LoadFailure& e) {
    std::fprintf(stderr, "load failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
