#include "caliper/ecc.hpp"

#include <algorithm>
#include <stdexcept>

#include "caliper/crypto.hpp"

namespace caliper {

namespace {

// ---------------------------------------------------------------- GF(2^8)

struct GfTables {
  std::uint8_t exp[512];
  std::uint8_t log[256];
  GfTables() {
    std::uint16_t x = 1;
    for (int i = 0; i < 255; ++i) {
      exp[i] = static_cast<std::uint8_t>(x);
      log[x] = static_cast<std::uint8_t>(i);
      x <<= 1;
      if (x & 0x100) x ^= 0x11d;
    }
    for (int i = 255; i < 512; ++i) exp[i] = exp[i - 255];
    log[0] = 0;
  }
};
const GfTables gf;

inline std::uint8_t gf_mul(std::uint8_t a, std::uint8_t b) {
  if (a == 0 || b == 0) return 0;
  return gf.exp[gf.log[a] + gf.log[b]];
}

inline std::uint8_t gf_div(std::uint8_t a, std::uint8_t b) {
  if (b == 0) throw std::domain_error("GF division by zero");
  if (a == 0) return 0;
  return gf.exp[(gf.log[a] + 255 - gf.log[b]) % 255];
}

inline std::uint8_t gf_pow(std::uint8_t a, int n) {
  if (a == 0) return n == 0 ? 1 : 0;
  int e = (gf.log[a] * n) % 255;
  if (e < 0) e += 255;
  return gf.exp[e];
}

inline std::uint8_t gf_inv(std::uint8_t a) { return gf.exp[255 - gf.log[a]]; }

// Polynomials are coefficient vectors, highest degree first.
using Poly = std::vector<std::uint8_t>;

Poly poly_mul(const Poly& a, const Poly& b) {
  Poly out(a.size() + b.size() - 1, 0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] ^= gf_mul(a[i], b[j]);
  return out;
}

std::uint8_t poly_eval(const Poly& p, std::uint8_t x) {
  std::uint8_t y = p.empty() ? 0 : p[0];
  for (std::size_t i = 1; i < p.size(); ++i) y = static_cast<std::uint8_t>(gf_mul(y, x) ^ p[i]);
  return y;
}

Poly poly_scale(const Poly& p, std::uint8_t s) {
  Poly out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = gf_mul(p[i], s);
  return out;
}

Poly poly_add(const Poly& a, const Poly& b) {
  Poly out(std::max(a.size(), b.size()), 0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i + out.size() - a.size()] ^= a[i];
  for (std::size_t i = 0; i < b.size(); ++i) out[i + out.size() - b.size()] ^= b[i];
  return out;
}

Poly rs_generator(std::size_t nsym) {
  Poly g = {1};
  for (std::size_t i = 0; i < nsym; ++i) g = poly_mul(g, {1, gf_pow(2, static_cast<int>(i))});
  return g;
}

Poly rs_syndromes(BytesView msg, std::size_t nsym) {
  Poly synd(nsym);
  Poly m(msg.begin(), msg.end());
  for (std::size_t i = 0; i < nsym; ++i) synd[i] = poly_eval(m, gf_pow(2, static_cast<int>(i)));
  return synd;
}

// Errata locator from known coefficient positions (0 = rightmost symbol).
Poly errata_locator(const std::vector<std::size_t>& coef_pos) {
  Poly loc = {1};
  for (std::size_t p : coef_pos) loc = poly_mul(loc, {gf_pow(2, static_cast<int>(p)), 1});
  return loc;
}

// lowest-degree-first evaluation (index i holds the x^i coefficient)
std::uint8_t poly_eval_lf(const Poly& p, std::uint8_t x) {
  std::uint8_t y = 0;
  for (std::size_t i = p.size(); i-- > 0;) y = static_cast<std::uint8_t>(gf_mul(y, x) ^ p[i]);
  return y;
}

// Forney correction at the given coefficient positions. Returns false if the
// correction is inconsistent.
bool correct_errata(Bytes& msg, const Poly& synd, const std::vector<std::size_t>& coef_pos) {
  // Lambda(x) = prod(1 + X_k x) and Omega(x) = S(x)Lambda(x) mod x^2t,
  // both lowest-degree-first; e_k = Omega(X_k^-1) / prod_{j!=k}(1 + X_j X_k^-1).
  std::vector<std::uint8_t> x_vals;
  for (std::size_t p : coef_pos) x_vals.push_back(gf_pow(2, static_cast<int>(p % 255)));

  Poly lambda_lf = {1};
  for (std::uint8_t xk : x_vals) {
    Poly next(lambda_lf.size() + 1, 0);
    for (std::size_t i = 0; i < lambda_lf.size(); ++i) {
      next[i] ^= lambda_lf[i];
      next[i + 1] ^= gf_mul(lambda_lf[i], xk);
    }
    lambda_lf = std::move(next);
  }

  Poly omega(synd.size(), 0);
  for (std::size_t i = 0; i < synd.size(); ++i) {
    for (std::size_t j = 0; j < lambda_lf.size() && j <= i; ++j)
      omega[i] ^= gf_mul(synd[i - j], lambda_lf[j]);
  }

  for (std::size_t i = 0; i < x_vals.size(); ++i) {
    std::uint8_t xi = x_vals[i];
    std::uint8_t xi_inv = gf_inv(xi);

    std::uint8_t denom = 1;
    for (std::size_t j = 0; j < x_vals.size(); ++j) {
      if (j == i) continue;
      denom = gf_mul(denom, static_cast<std::uint8_t>(1 ^ gf_mul(xi_inv, x_vals[j])));
    }
    if (denom == 0) return false;

    std::uint8_t magnitude = gf_div(poly_eval_lf(omega, xi_inv), denom);
    std::size_t msg_pos = msg.size() - 1 - coef_pos[i];
    msg[msg_pos] ^= magnitude;
  }
  return true;
}

// Forney syndromes: fold the known-erasure contributions out of the
// syndromes so Berlekamp-Massey sees only the unknown errors.
Poly forney_syndromes(const Poly& synd, const std::vector<std::size_t>& erase_coef) {
  Poly fsynd = synd;
  for (std::size_t c : erase_coef) {
    std::uint8_t x = gf_pow(2, static_cast<int>(c % 255));
    for (std::size_t j = 0; j + 1 < fsynd.size(); ++j)
      fsynd[j] = static_cast<std::uint8_t>(gf_mul(fsynd[j], x) ^ fsynd[j + 1]);
  }
  return fsynd;
}

// Berlekamp-Massey over the Forney syndromes; only the first
// nsym - erase_count entries of fsynd are meaningful.
std::optional<Poly> find_error_locator(const Poly& fsynd, std::size_t nsym,
                                       std::size_t erase_count) {
  Poly err_loc = {1};
  Poly old_loc = {1};

  for (std::size_t k = 0; k < nsym - erase_count; ++k) {
    std::uint8_t delta = fsynd[k];
    for (std::size_t j = 1; j < err_loc.size() && j <= k; ++j)
      delta ^= gf_mul(err_loc[err_loc.size() - 1 - j], fsynd[k - j]);

    old_loc.push_back(0);
    if (delta != 0) {
      if (old_loc.size() > err_loc.size()) {
        Poly new_loc = poly_scale(old_loc, delta);
        old_loc = poly_scale(err_loc, gf_inv(delta));
        err_loc = new_loc;
      }
      err_loc = poly_add(err_loc, poly_scale(old_loc, delta));
    }
  }

  while (!err_loc.empty() && err_loc[0] == 0) err_loc.erase(err_loc.begin());
  if (err_loc.empty()) return std::nullopt;
  std::size_t errs = err_loc.size() - 1;
  if (errs * 2 + erase_count > nsym) return std::nullopt;
  return err_loc;
}

// Chien search: coefficient positions of the locator roots. The locator has
// roots at X_k^-1 = alpha^-c for each errata coefficient position c.
std::optional<std::vector<std::size_t>> find_errors(const Poly& err_loc, std::size_t nmess) {
  std::size_t errs = err_loc.size() - 1;
  std::vector<std::size_t> pos;
  for (std::size_t c = 0; c < nmess; ++c) {
    std::uint8_t x = gf_pow(2, static_cast<int>((255 - c % 255) % 255));
    if (poly_eval(err_loc, x) == 0) pos.push_back(c);
  }
  if (pos.size() != errs) return std::nullopt;
  return pos;
}

bool synd_all_zero(const Poly& synd) {
  return std::all_of(synd.begin(), synd.end(), [](std::uint8_t s) { return s == 0; });
}

}  // namespace

namespace rs {

Bytes encode_block(BytesView data, std::size_t nsym) {
  if (data.size() + nsym > 255) throw std::invalid_argument("RS block exceeds 255 symbols");
  if (nsym == 0) return Bytes(data.begin(), data.end());
  Poly gen = rs_generator(nsym);
  Bytes out(data.begin(), data.end());
  out.resize(data.size() + nsym, 0);
  // polynomial long division; remainder becomes the parity tail
  Bytes rem(out);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint8_t coef = rem[i];
    if (coef != 0) {
      for (std::size_t j = 1; j < gen.size(); ++j) rem[i + j] ^= gf_mul(gen[j], coef);
    }
  }
  std::copy(rem.end() - nsym, rem.end(), out.end() - nsym);
  return out;
}

std::optional<Bytes> decode_block(BytesView block, std::size_t nsym,
                                  const std::vector<std::size_t>& erasures) {
  if (block.size() > 255) return std::nullopt;
  if (erasures.size() > nsym) return std::nullopt;
  Bytes msg(block.begin(), block.end());
  if (nsym == 0) {
    msg.resize(msg.size());
    return msg;
  }

  // erasure index -> coefficient position
  std::vector<std::size_t> erase_coef;
  for (std::size_t e : erasures) {
    if (e >= msg.size()) return std::nullopt;
    msg[e] = 0;
    erase_coef.push_back(msg.size() - 1 - e);
  }

  Poly synd = rs_syndromes(msg, nsym);
  if (synd_all_zero(synd)) {
    msg.resize(msg.size() - nsym);
    return msg;
  }

  Poly fsynd = forney_syndromes(synd, erase_coef);
  std::optional<Poly> err_loc;
  std::vector<std::size_t> err_pos;
  if (erase_coef.size() < nsym) {
    err_loc = find_error_locator(fsynd, nsym, erase_coef.size());
    if (!err_loc) return std::nullopt;
    auto found = find_errors(*err_loc, msg.size());
    if (!found) return std::nullopt;
    err_pos = *found;
  }

  std::vector<std::size_t> all_pos = erase_coef;
  for (std::size_t p : err_pos) {
    if (std::find(all_pos.begin(), all_pos.end(), p) == all_pos.end()) all_pos.push_back(p);
  }
  if (!correct_errata(msg, synd, all_pos)) return std::nullopt;

  if (!synd_all_zero(rs_syndromes(msg, nsym))) return std::nullopt;
  msg.resize(msg.size() - nsym);
  return msg;
}

}  // namespace rs

// ------------------------------------------------------------- codec layer

Bytes CodecParams::serialize() const {
  ByteWriter w;
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(data_len));
  w.u32(static_cast<std::uint32_t>(parity_symbols));
  w.u32(static_cast<std::uint32_t>(fragment_len));
  w.u32(static_cast<std::uint32_t>(fragment_count));
  w.u32(static_cast<std::uint32_t>(blocks));
  return w.take();
}

CodecParams CodecParams::deserialize(BytesView data) {
  ByteReader r(data);
  if (r.u8() != 1) throw ParseError("unsupported codec params version");
  CodecParams p;
  p.data_len = r.u32();
  p.parity_symbols = r.u32();
  p.fragment_len = r.u32();
  p.fragment_count = r.u32();
  p.blocks = r.u32();
  return p;
}

CodecParams make_codec_params(std::size_t data_len, std::size_t parity_symbols, std::size_t m) {
  if (data_len == 0 || m == 0) throw std::invalid_argument("make_codec_params: empty shape");
  CodecParams p;
  p.data_len = data_len;
  p.parity_symbols = parity_symbols;
  p.fragment_count = m;
  if (parity_symbols == 0) {
    p.blocks = 0;
    p.fragment_len = (data_len + m - 1) / m;
    return p;
  }
  if (parity_symbols >= 255) throw std::invalid_argument("parity budget exceeds RS block");
  std::size_t need = data_len + 4;  // key + checksum
  std::size_t b = (need + (255 - parity_symbols) - 1) / (255 - parity_symbols);
  for (;; ++b) {
    std::size_t total_min = need + b * parity_symbols;
    std::size_t fl = (total_min + m - 1) / m;
    std::size_t total = fl * m;
    // largest block after even split must stay within 255 symbols
    std::size_t payload = total - b * parity_symbols;
    std::size_t max_block = (payload + b - 1) / b + parity_symbols;
    if (max_block <= 255) {
      p.blocks = b;
      p.fragment_len = fl;
      return p;
    }
  }
}

Bytes mask(BytesView data, BytesView pad) {
  return xor_bytes(data, pad);
}

FragmentSet partition(BytesView codeword, std::size_t m, std::size_t fragment_len) {
  if (m * fragment_len < codeword.size())
    throw std::invalid_argument("partition: fragments too small for codeword");
  FragmentSet fs;
  fs.fragment_len = fragment_len;
  fs.fragments.resize(m);
  fs.present.assign(m, true);
  for (std::size_t i = 0; i < m; ++i) {
    Bytes& f = fs.fragments[i];
    f.assign(fragment_len, 0);
    for (std::size_t j = 0; j < fragment_len; ++j) {
      std::size_t pos = i * fragment_len + j;
      if (pos < codeword.size()) f[j] = codeword[pos];
    }
  }
  return fs;
}

Bytes reassemble(const FragmentSet& fs) {
  Bytes out;
  out.reserve(fs.count() * fs.fragment_len);
  for (std::size_t i = 0; i < fs.count(); ++i) {
    if (!fs.present[i]) {
      out.insert(out.end(), fs.fragment_len, 0);
      continue;
    }
    if (fs.fragments[i].size() != fs.fragment_len)
      throw std::invalid_argument("reassemble: malformed fragment length");
    out.insert(out.end(), fs.fragments[i].begin(), fs.fragments[i].end());
  }
  return out;
}

namespace {

// payload byte counts per block; earlier blocks take the extra bytes
std::vector<std::size_t> block_data_sizes(const CodecParams& p) {
  std::vector<std::size_t> sizes(p.blocks);
  std::size_t payload = p.payload_len();
  std::size_t q = payload / p.blocks, r = payload % p.blocks;
  for (std::size_t b = 0; b < p.blocks; ++b) sizes[b] = q + (b < r ? 1 : 0);
  return sizes;
}

// interleaved position of symbol `idx` of block `b`
// stream position j maps to block (j % B), symbol (j / B)
}  // namespace

Bytes ecc_encode(BytesView k_pr, const CodecParams& p) {
  if (k_pr.size() != p.data_len) throw std::invalid_argument("ecc_encode: key length mismatch");
  if (p.parity_symbols == 0) return Bytes(k_pr.begin(), k_pr.end());
  if (p.blocks == 0 || p.codeword_len() < p.data_len + 4 + p.blocks * p.parity_symbols)
    throw std::invalid_argument("ecc_encode: invalid params");

  Bytes payload(k_pr.begin(), k_pr.end());
  std::uint32_t cks = crc32(k_pr);
  for (int i = 3; i >= 0; --i) payload.push_back(static_cast<std::uint8_t>(cks >> (8 * i)));
  payload.resize(p.payload_len(), 0);

  auto sizes = block_data_sizes(p);
  std::vector<Bytes> blocks;
  std::size_t off = 0;
  for (std::size_t b = 0; b < p.blocks; ++b) {
    BytesView part(payload.data() + off, sizes[b]);
    blocks.push_back(rs::encode_block(part, p.parity_symbols));
    off += sizes[b];
  }

  Bytes codeword(p.codeword_len());
  std::vector<std::size_t> cursor(p.blocks, 0);
  for (std::size_t j = 0; j < codeword.size(); ++j) {
    std::size_t b = j % p.blocks;
    std::size_t idx = j / p.blocks;
    if (idx >= blocks[b].size()) throw std::logic_error("ecc_encode: interleave overflow");
    codeword[j] = blocks[b][idx];
    ++cursor[b];
  }
  for (std::size_t b = 0; b < p.blocks; ++b) {
    if (cursor[b] != blocks[b].size()) throw std::logic_error("ecc_encode: interleave underfill");
  }
  secure_wipe(payload);
  return codeword;
}

std::optional<Bytes> ecc_decode(const FragmentSet& fs, const CodecParams& p) {
  if (fs.count() != p.fragment_count || fs.fragment_len != p.fragment_len)
    throw std::invalid_argument("ecc_decode: fragment set shape mismatch");

  if (p.parity_symbols == 0) {
    for (bool pr : fs.present)
      if (!pr) return std::nullopt;
    Bytes stream = reassemble(fs);
    stream.resize(p.data_len);
    return stream;
  }

  Bytes stream = reassemble(fs);
  std::vector<std::vector<std::size_t>> erasures(p.blocks);
  std::vector<Bytes> blocks(p.blocks);
  auto sizes = block_data_sizes(p);
  for (std::size_t b = 0; b < p.blocks; ++b) blocks[b].resize(sizes[b] + p.parity_symbols);

  for (std::size_t j = 0; j < stream.size(); ++j) {
    std::size_t b = j % p.blocks;
    std::size_t idx = j / p.blocks;
    blocks[b][idx] = stream[j];
    std::size_t frag = j / p.fragment_len;
    if (!fs.present[frag]) erasures[b].push_back(idx);
  }

  Bytes payload;
  for (std::size_t b = 0; b < p.blocks; ++b) {
    auto data = rs::decode_block(blocks[b], p.parity_symbols, erasures[b]);
    if (!data) return std::nullopt;
    payload.insert(payload.end(), data->begin(), data->end());
  }

  if (payload.size() != p.payload_len()) return std::nullopt;
  for (std::size_t i = p.data_len + 4; i < payload.size(); ++i) {
    if (payload[i] != 0) return std::nullopt;
  }
  Bytes key(payload.begin(), payload.begin() + p.data_len);
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored = stored << 8 | payload[p.data_len + i];
  if (stored != crc32(key)) {
    secure_wipe(key);
    secure_wipe(payload);
    return std::nullopt;
  }
  secure_wipe(payload);
  return key;
}

}  // namespace caliper
