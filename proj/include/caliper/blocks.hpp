#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "caliper/bytes.hpp"
#include "caliper/crypto.hpp"

namespace caliper {

enum class ModelKind : std::uint8_t {
  feature_threshold = 1,
  block_hash = 2,
};

/// Fixed-point feature scale: Q.16. Training and chaff generation quantize
/// through this so a model's bytes are canonical (same model, same h1).
inline constexpr double kFeatureScale = 65536.0;

std::int64_t to_fixed(double v);
double from_fixed(std::int64_t v);

struct MatcherModel {
  ModelKind kind = ModelKind::feature_threshold;
  std::uint8_t mid = 0;
  Bytes payload;

  Bytes serialize() const;
  static MatcherModel deserialize(BytesView data);
};

struct FeatureThresholdModel {
  std::vector<std::int64_t> features;  // fixed-point template
  std::int64_t threshold = 0;          // fixed-point squared-distance bound

  std::size_t dim() const { return features.size(); }
  Bytes encode() const;
  static FeatureThresholdModel decode(BytesView payload);
};

struct BlockHashModel {
  std::uint64_t lba = 0;
  Digest block_digest{};

  Bytes encode() const;
  static BlockHashModel decode(BytesView payload);
};

struct DeviceImage {
  Bytes data;
  std::size_t block_size = 512;

  std::size_t block_count() const { return data.size() / block_size; }
  Bytes read_block(std::uint64_t lba) const;
};

/// Raised by classify_row when a row's modality has no usable samples;
/// the caller marks the row as an erasure and moves on.
struct ModalityUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Live evidence a challenge is answered from: recent feature samples per
/// modality plus the device image for comparator rows.
struct LiveData {
  std::map<std::uint8_t, std::vector<std::vector<double>>> feature_samples;
  const DeviceImage* image = nullptr;
};

MatcherModel train_feature_matcher(const std::vector<std::vector<double>>& samples,
                                   std::uint8_t mid);

struct PopulationParams {
  std::size_t dim = 0;
  double feature_lo = 0.0;
  double feature_hi = 0.0;
  double threshold_lo = 0.0;
  double threshold_hi = 0.0;
};

MatcherModel generate_chaff(const PopulationParams& population, std::uint8_t mid, Rng& rng);

double score(const MatcherModel& model, const std::vector<double>& sample);
double score(const MatcherModel& model, const DeviceImage& image);

struct RowClassification {
  std::size_t best_index = 0;
  double margin = 0.0;
};

RowClassification classify_row(const std::vector<MatcherModel>& candidates, const LiveData& live);

struct BlockRow {
  MatcherModel real;
  std::vector<MatcherModel> chaff;
};

std::vector<BlockRow> make_block_ensemble(const DeviceImage& image, std::size_t count,
                                          std::size_t chaff_per_row, std::uint8_t mid, Rng& rng);

/// Synthetic ground truth for the simulated sensor streams.
struct ModalityProfile {
  std::vector<double> mean;
  double sigma = 1.0;
};

struct UserProfile {
  std::map<std::uint8_t, ModalityProfile> modalities;
};

std::vector<double> draw_sample(const ModalityProfile& profile, Rng& rng);

}  // namespace caliper
