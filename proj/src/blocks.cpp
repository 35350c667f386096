#include "caliper/blocks.hpp"

#include <cmath>
#include <limits>

namespace caliper {

namespace {

constexpr std::uint8_t kModelVersion = 1;
// degenerate single-sample training still needs a usable acceptance region
constexpr double kThresholdFloor = 1e-6;
constexpr double kThresholdMargin = 1.5;

double sq_dist(const std::vector<std::int64_t>& tmpl, const std::vector<double>& sample) {
  if (tmpl.size() != sample.size())
    throw std::invalid_argument("score: sample dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    double d = from_fixed(tmpl[i]) - sample[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

std::int64_t to_fixed(double v) {
  return static_cast<std::int64_t>(std::llround(v * kFeatureScale));
}

double from_fixed(std::int64_t v) {
  return static_cast<double>(v) / kFeatureScale;
}

Bytes MatcherModel::serialize() const {
  ByteWriter w;
  w.u8(kModelVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u8(mid);
  w.field(payload);
  return w.take();
}

MatcherModel MatcherModel::deserialize(BytesView data) {
  ByteReader r(data);
  if (r.u8() != kModelVersion) throw ParseError("unsupported model version");
  MatcherModel m;
  m.kind = static_cast<ModelKind>(r.u8());
  if (m.kind != ModelKind::feature_threshold && m.kind != ModelKind::block_hash)
    throw ParseError("unknown model kind");
  m.mid = r.u8();
  m.payload = r.field();
  if (!r.done()) throw ParseError("trailing bytes in model");
  return m;
}

Bytes FeatureThresholdModel::encode() const {
  ByteWriter w;
  w.u8(kModelVersion);
  w.u32(static_cast<std::uint32_t>(features.size()));
  for (std::int64_t f : features) w.u64(static_cast<std::uint64_t>(f));
  w.u64(static_cast<std::uint64_t>(threshold));
  return w.take();
}

FeatureThresholdModel FeatureThresholdModel::decode(BytesView payload) {
  ByteReader r(payload);
  if (r.u8() != kModelVersion) throw ParseError("unsupported payload version");
  FeatureThresholdModel m;
  std::uint32_t d = r.u32();
  if (d == 0) throw ParseError("zero-dimension template");
  m.features.resize(d);
  for (std::uint32_t i = 0; i < d; ++i) m.features[i] = static_cast<std::int64_t>(r.u64());
  m.threshold = static_cast<std::int64_t>(r.u64());
  if (m.threshold <= 0) throw ParseError("non-positive threshold");
  if (!r.done()) throw ParseError("trailing bytes in payload");
  return m;
}

Bytes BlockHashModel::encode() const {
  ByteWriter w;
  w.u8(kModelVersion);
  w.u64(lba);
  w.field(BytesView(block_digest));
  return w.take();
}

BlockHashModel BlockHashModel::decode(BytesView payload) {
  ByteReader r(payload);
  if (r.u8() != kModelVersion) throw ParseError("unsupported payload version");
  BlockHashModel m;
  m.lba = r.u64();
  Bytes d = r.field();
  if (d.size() != kDigestLen) throw ParseError("bad block digest length");
  std::copy(d.begin(), d.end(), m.block_digest.begin());
  if (!r.done()) throw ParseError("trailing bytes in payload");
  return m;
}

Bytes DeviceImage::read_block(std::uint64_t lba) const {
  if ((lba + 1) * block_size > data.size()) throw std::out_of_range("LBA beyond device image");
  return Bytes(data.begin() + lba * block_size, data.begin() + (lba + 1) * block_size);
}

MatcherModel train_feature_matcher(const std::vector<std::vector<double>>& samples,
                                   std::uint8_t mid) {
  if (samples.empty()) throw std::invalid_argument("train: no samples");
  const std::size_t d = samples[0].size();
  if (d == 0) throw std::invalid_argument("train: zero-dimension samples");
  for (const auto& s : samples) {
    if (s.size() != d) throw std::invalid_argument("train: ragged sample dimensions");
  }

  FeatureThresholdModel model;
  model.features.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    double sum = 0.0;
    for (const auto& s : samples) sum += s[i];
    model.features[i] = to_fixed(sum / static_cast<double>(samples.size()));
  }

  double max_sq = 0.0;
  for (const auto& s : samples) max_sq = std::max(max_sq, sq_dist(model.features, s));
  double threshold = std::max(max_sq * kThresholdMargin, kThresholdFloor);
  model.threshold = std::max<std::int64_t>(to_fixed(threshold), 1);

  MatcherModel out;
  out.kind = ModelKind::feature_threshold;
  out.mid = mid;
  out.payload = model.encode();
  return out;
}

MatcherModel generate_chaff(const PopulationParams& population, std::uint8_t mid, Rng& rng) {
  if (population.dim == 0) throw std::invalid_argument("chaff: zero-dimension population");
  FeatureThresholdModel model;
  model.features.resize(population.dim);
  const double span = population.feature_hi - population.feature_lo;
  for (std::size_t i = 0; i < population.dim; ++i) {
    model.features[i] = to_fixed(population.feature_lo + rng.uniform01() * span);
  }
  const double tspan = population.threshold_hi - population.threshold_lo;
  double threshold = std::max(population.threshold_lo + rng.uniform01() * tspan, kThresholdFloor);
  model.threshold = std::max<std::int64_t>(to_fixed(threshold), 1);

  MatcherModel out;
  out.kind = ModelKind::feature_threshold;
  out.mid = mid;
  out.payload = model.encode();
  return out;
}

double score(const MatcherModel& model, const std::vector<double>& sample) {
  if (model.kind != ModelKind::feature_threshold)
    throw std::invalid_argument("score: feature sample against non-feature model");
  FeatureThresholdModel m = FeatureThresholdModel::decode(model.payload);
  return -sq_dist(m.features, sample);
}

double score(const MatcherModel& model, const DeviceImage& image) {
  if (model.kind != ModelKind::block_hash)
    throw std::invalid_argument("score: device image against non-comparator model");
  BlockHashModel m = BlockHashModel::decode(model.payload);
  if ((m.lba + 1) * image.block_size > image.data.size()) return 0.0;
  return sha256(image.read_block(m.lba)) == m.block_digest ? 1.0 : 0.0;
}

RowClassification classify_row(const std::vector<MatcherModel>& candidates,
                               const LiveData& live) {
  if (candidates.size() < 2) throw std::invalid_argument("classify_row: need >= 2 candidates");
  const ModelKind kind = candidates[0].kind;
  const std::uint8_t mid = candidates[0].mid;
  for (const auto& c : candidates) {
    if (c.kind != kind) throw std::invalid_argument("classify_row: mixed candidate kinds");
  }

  std::vector<double> means(candidates.size(), 0.0);
  if (kind == ModelKind::block_hash) {
    if (live.image == nullptr) throw ModalityUnavailable("no device image available");
    for (std::size_t i = 0; i < candidates.size(); ++i) means[i] = score(candidates[i], *live.image);
  } else {
    auto it = live.feature_samples.find(mid);
    if (it == live.feature_samples.end() || it->second.empty())
      throw ModalityUnavailable("no live samples for modality");
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      double acc = 0.0;
      for (const auto& s : it->second) acc += score(candidates[i], s);
      means[i] = acc / static_cast<double>(it->second.size());
    }
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < means.size(); ++i) {
    if (means[i] > means[best]) best = i;  // ties keep the lowest index
  }
  double second = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (i != best) second = std::max(second, means[i]);
  }
  return {best, means[best] - second};
}

std::vector<BlockRow> make_block_ensemble(const DeviceImage& image, std::size_t count,
                                          std::size_t chaff_per_row, std::uint8_t mid, Rng& rng) {
  const std::size_t available = image.block_count();
  if (available == 0) throw std::invalid_argument("make_block_ensemble: image too small");
  if (count > available) throw std::invalid_argument("make_block_ensemble: not enough blocks");

  std::vector<BlockRow> out;
  std::vector<bool> used(available, false);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t lba;
    do {
      lba = rng.below(available);
    } while (used[lba]);
    used[lba] = true;

    BlockHashModel real;
    real.lba = lba;
    real.block_digest = sha256(image.read_block(lba));

    BlockRow row;
    row.real.kind = ModelKind::block_hash;
    row.real.mid = mid;
    row.real.payload = real.encode();
    for (std::size_t j = 0; j < chaff_per_row; ++j) {
      BlockHashModel chaff;
      chaff.lba = rng.below(available);
      Bytes fake = rng.bytes(kDigestLen);
      std::copy(fake.begin(), fake.end(), chaff.block_digest.begin());
      MatcherModel m;
      m.kind = ModelKind::block_hash;
      m.mid = mid;
      m.payload = chaff.encode();
      row.chaff.push_back(std::move(m));
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<double> draw_sample(const ModalityProfile& profile, Rng& rng) {
  if (profile.sigma < 0.0) throw std::invalid_argument("draw_sample: negative sigma");
  std::vector<double> out(profile.mean.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (profile.sigma == 0.0) {
      out[i] = profile.mean[i];
      continue;
    }
    // Box-Muller
    double u1 = rng.uniform01(), u2 = rng.uniform01();
    while (u1 <= 0.0) u1 = rng.uniform01();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    out[i] = profile.mean[i] + profile.sigma * z;
  }
  return out;
}

}  // namespace caliper
