#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gcml/attention.hpp"
#include "gcml/cam.hpp"
#include "gcml/tensorio.hpp"

namespace gcml {

struct TrainingSample {
  FeatureMapStack features;
  std::size_t label = 0;

  friend bool operator==(const TrainingSample&, const TrainingSample&) = default;
};

// Loads every sample of a manifest into memory.
std::vector<TrainingSample> load_samples(const DatasetManifest& manifest);

// Per-class sparse key -> count table. Each row, once normalized, is the
// discrete likelihood P(key | class) over the 2^L activation patterns.
//
// Counts are never discarded: normalization is exposed as a read-only view
// so a store can keep absorbing data. `normalized()` is a persisted flag that
// marks a store as finalized; finalized stores reject further updates.
class GcmlStore {
 public:
  using Row = std::unordered_map<std::uint64_t, std::uint64_t>;

  GcmlStore(std::vector<std::string> classes, GcmlConfig cfg,
            PoolingMode pooling = PoolingMode::kSum);

  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t num_classes() const { return classes_.size(); }
  const GcmlConfig& config() const { return cfg_; }
  PoolingMode pooling() const { return pooling_; }

  // Reinterprets the L key bits as a different grid factorization.
  // Stores persist only L, so a loaded store may need this.
  void set_grid(std::size_t grid_h, std::size_t grid_w);

  bool normalized() const { return normalized_; }
  void set_normalized(bool value) { normalized_ = value; }

  void increment(std::size_t cls, BitKey key, std::uint64_t by = 1);

  std::uint64_t count(std::size_t cls, BitKey key) const;
  std::uint64_t row_total(std::size_t cls) const;
  std::uint64_t total() const;
  const Row& row(std::size_t cls) const;

  // count / row_total, 0 for unseen keys or empty rows. With alpha > 0:
  // (count + alpha) / (row_total + alpha * 2^L).
  double lookup(std::size_t cls, BitKey key, double alpha = 0.0) const;

  // Entries of one row sorted by key.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> sorted_row(std::size_t cls) const;

  // Same L, tau, bit order, pooling and class labels.
  bool compatible_with(const GcmlStore& other) const;

  // Row totals match summed counts, keys fit in L bits, counts are nonzero.
  void validate() const;

  // Grid factorization is not part of equality; only L is.
  friend bool operator==(const GcmlStore& a, const GcmlStore& b);

 private:
  void check_class(std::size_t cls) const;

  std::vector<std::string> classes_;
  GcmlConfig cfg_;
  PoolingMode pooling_;
  bool normalized_ = false;
  std::vector<Row> rows_;
  std::vector<std::uint64_t> row_totals_;
};

// Read-only per-row normalization over a store's counts.
class NormalizedStoreView {
 public:
  explicit NormalizedStoreView(const GcmlStore& store, double alpha = 0.0);

  double lookup(std::size_t cls, BitKey key) const;
  bool row_empty(std::size_t cls) const;
  double row_sum(std::size_t cls) const;
  std::vector<std::pair<std::uint64_t, double>> distribution(std::size_t cls) const;

  const GcmlStore& store() const { return *store_; }

 private:
  const GcmlStore* store_;
  double alpha_;
};

NormalizedStoreView normalize_rows(const GcmlStore& store, double alpha = 0.0);

// Dense C x 2^L count table, for small L only (L <= 20).
class DenseCounts {
 public:
  static constexpr std::size_t kMaxBits = 20;

  DenseCounts(std::size_t classes, std::size_t key_bits);

  void increment(std::size_t cls, BitKey key, std::uint64_t by = 1);
  std::uint64_t count(std::size_t cls, BitKey key) const;
  std::size_t classes() const { return counts_.size(); }
  std::size_t key_bits() const { return key_bits_; }

  DenseCounts& operator+=(const DenseCounts& other);

 private:
  std::size_t key_bits_;
  std::vector<std::vector<std::uint64_t>> counts_;
};

// Reduces a feature stack to the attention grid if its spatial dims differ.
FeatureMapStack fit_to_grid(const FeatureMapStack& features, const GcmlConfig& cfg);

// Random-crop style jitter: shift by up to one cell in each axis, zero fill.
FeatureMapStack jitter_features(const FeatureMapStack& features, std::uint64_t seed);

// Per-sample seed derived from (epoch seed, sample index).
std::uint64_t derive_sample_seed(std::uint64_t seed, std::uint64_t index);

// One count: row = label, key = attention_key(compute_cam(f, head, label)).
BitKey train_update(GcmlStore& store, const FeatureMapStack& features,
                    const ClassifierHead& head, std::size_t label);

struct EpochOptions {
  // When set, each sample is jittered with derive_sample_seed(seed, first_index + i).
  std::optional<std::uint64_t> augment_seed;
  std::size_t first_index = 0;
};

void train_epoch(GcmlStore& store, std::span<const TrainingSample> samples,
                 const ClassifierHead& head, const EpochOptions& options = {});
void train_epoch(GcmlStore& store, const DatasetManifest& dataset, const ClassifierHead& head,
                 const EpochOptions& options = {});

// Partition-and-merge training across `threads` workers. Produces exactly the
// store a sequential train_epoch would.
void train_epoch_parallel(GcmlStore& store, std::span<const TrainingSample> samples,
                          const ClassifierHead& head, const EpochOptions& options,
                          std::size_t threads);

// Builds a dense table over the same samples in parallel (no augmentation).
DenseCounts train_dense_parallel(std::span<const TrainingSample> samples,
                                 const ClassifierHead& head, const GcmlConfig& cfg,
                                 std::size_t threads);

enum class FallbackPolicy { kCnnScore, kFirstClass };

std::string_view to_string(FallbackPolicy policy);
FallbackPolicy parse_fallback(std::string_view text);

struct PredictOptions {
  FallbackPolicy fallback = FallbackPolicy::kCnnScore;
  double alpha = 0.0;
};

struct Prediction {
  std::size_t class_index = 0;
  std::vector<double> likelihoods;
  std::vector<BitKey> keys;
  bool fallback_used = false;
  // Additive path: S_c and its argmax.
  std::vector<double> scores;
  std::size_t cnn_class = 0;
};

Prediction predict(const FeatureMapStack& features, const ClassifierHead& head,
                   const GcmlStore& store, const PredictOptions& options = {});

// Same decision from precomputed per-class maps and scores.
Prediction predict_from_cams(std::span<const Cam> cams, std::vector<double> scores,
                             const GcmlStore& store, const PredictOptions& options = {});

GcmlStore merge(const GcmlStore& a, const GcmlStore& b);

// GCS1 store file. See README for the byte layout.
void save_store(const GcmlStore& store, std::ostream& out);
GcmlStore load_store(std::istream& in);
void save_store(const GcmlStore& store, const std::filesystem::path& path);
GcmlStore load_store(const std::filesystem::path& path);

inline constexpr std::uint16_t kStoreVersion = 1;

}  // namespace gcml
