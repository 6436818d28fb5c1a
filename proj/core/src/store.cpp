#include "gcml/store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <thread>

#include "byteio.hpp"

namespace gcml {

namespace {

constexpr char kStoreMagic[4] = {'G', 'C', 'S', '1'};

bool key_fits(std::uint64_t key, std::size_t bits) {
  return bits >= 64 || (key >> bits) == 0;
}

void check_head_matches(const GcmlStore& store, const ClassifierHead& head) {
  require(head.classes == store.num_classes(), ErrorCode::kConfigMismatch,
          "head has " + std::to_string(head.classes) + " classes but store has " +
              std::to_string(store.num_classes()));
  require(head.pooling == store.pooling(), ErrorCode::kConfigMismatch,
          "head pooling mode '" + std::string(to_string(head.pooling)) +
              "' differs from store pooling mode '" + std::string(to_string(store.pooling())) +
              "'");
}

GcmlConfig grid_for_bits(std::size_t bits, GcmlConfig cfg) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(bits))));
  if (side * side == bits) {
    cfg.grid_h = side;
    cfg.grid_w = side;
  } else {
    cfg.grid_h = 1;
    cfg.grid_w = bits;
  }
  return cfg;
}

}  // namespace

std::vector<TrainingSample> load_samples(const DatasetManifest& manifest) {
  manifest.validate();
  std::vector<TrainingSample> out;
  out.reserve(manifest.samples.size());
  for (const auto& s : manifest.samples) {
    out.push_back({FeatureMapStack::from_tensor(load_tensor(s.path)), s.label});
  }
  return out;
}

GcmlStore::GcmlStore(std::vector<std::string> classes, GcmlConfig cfg, PoolingMode pooling)
    : classes_(std::move(classes)),
      cfg_(cfg),
      pooling_(pooling),
      rows_(classes_.size()),
      row_totals_(classes_.size(), 0) {
  require(!classes_.empty(), ErrorCode::kInvalidArgument, "store needs at least one class");
  cfg_.validate();
}

void GcmlStore::set_grid(std::size_t grid_h, std::size_t grid_w) {
  require(grid_h * grid_w == cfg_.key_bits(), ErrorCode::kConfigMismatch,
          "grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
              " does not match the store's key length " + std::to_string(cfg_.key_bits()));
  cfg_.grid_h = grid_h;
  cfg_.grid_w = grid_w;
}

void GcmlStore::check_class(std::size_t cls) const {
  require(cls < classes_.size(), ErrorCode::kOutOfRange,
          "class index " + std::to_string(cls) + " out of range for " +
              std::to_string(classes_.size()) + " classes");
}

void GcmlStore::increment(std::size_t cls, BitKey key, std::uint64_t by) {
  check_class(cls);
  require(!normalized_, ErrorCode::kFrozen, "store is finalized (normalized flag set)");
  require(key_fits(key.value, cfg_.key_bits()), ErrorCode::kOutOfRange,
          "key " + std::to_string(key.value) + " does not fit in " +
              std::to_string(cfg_.key_bits()) + " bits");
  require(by >= 1, ErrorCode::kInvalidArgument, "increment must be positive");
  rows_[cls][key.value] += by;
  row_totals_[cls] += by;
}

std::uint64_t GcmlStore::count(std::size_t cls, BitKey key) const {
  check_class(cls);
  const auto& row = rows_[cls];
  const auto it = row.find(key.value);
  return it == row.end() ? 0 : it->second;
}

std::uint64_t GcmlStore::row_total(std::size_t cls) const {
  check_class(cls);
  return row_totals_[cls];
}

std::uint64_t GcmlStore::total() const {
  std::uint64_t sum = 0;
  for (auto t : row_totals_) sum += t;
  return sum;
}

const GcmlStore::Row& GcmlStore::row(std::size_t cls) const {
  check_class(cls);
  return rows_[cls];
}

double GcmlStore::lookup(std::size_t cls, BitKey key, double alpha) const {
  check_class(cls);
  require(key_fits(key.value, cfg_.key_bits()), ErrorCode::kOutOfRange,
          "lookup key does not fit in the store's key length");
  require(alpha >= 0.0 && std::isfinite(alpha), ErrorCode::kInvalidArgument,
          "smoothing alpha must be finite and >= 0");
  const double total = static_cast<double>(row_totals_[cls]);
  const double hits = static_cast<double>(count(cls, key));
  if (alpha == 0.0) return total == 0.0 ? 0.0 : hits / total;
  const double space = std::ldexp(1.0, static_cast<int>(cfg_.key_bits()));
  return (hits + alpha) / (total + alpha * space);
}

std::vector<std::pair<std::uint64_t, std::uint64_t>> GcmlStore::sorted_row(
    std::size_t cls) const {
  const auto& r = row(cls);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> entries(r.begin(), r.end());
  std::sort(entries.begin(), entries.end());
  return entries;
}

bool GcmlStore::compatible_with(const GcmlStore& other) const {
  return cfg_.key_bits() == other.cfg_.key_bits() && cfg_.tau == other.cfg_.tau &&
         cfg_.bit_order == other.cfg_.bit_order && pooling_ == other.pooling_ &&
         classes_ == other.classes_;
}

void GcmlStore::validate() const {
  cfg_.validate();
  require(!classes_.empty(), ErrorCode::kCorrupt, "store has no classes");
  require(rows_.size() == classes_.size() && row_totals_.size() == classes_.size(),
          ErrorCode::kCorrupt, "row count does not match class count");
  for (std::size_t c = 0; c < rows_.size(); ++c) {
    std::uint64_t sum = 0;
    for (const auto& [key, n] : rows_[c]) {
      require(key_fits(key, cfg_.key_bits()), ErrorCode::kCorrupt,
              "row " + std::to_string(c) + " holds a key wider than L bits");
      require(n >= 1, ErrorCode::kCorrupt, "row " + std::to_string(c) + " holds a zero count");
      require(sum <= std::numeric_limits<std::uint64_t>::max() - n, ErrorCode::kCorrupt,
              "row " + std::to_string(c) + " count overflow");
      sum += n;
    }
    require(sum == row_totals_[c], ErrorCode::kCorrupt,
            "row " + std::to_string(c) + " total " + std::to_string(row_totals_[c]) +
                " does not equal summed counts " + std::to_string(sum));
  }
}

bool operator==(const GcmlStore& a, const GcmlStore& b) {
  return a.compatible_with(b) && a.normalized_ == b.normalized_ && a.rows_ == b.rows_ &&
         a.row_totals_ == b.row_totals_;
}

NormalizedStoreView::NormalizedStoreView(const GcmlStore& store, double alpha)
    : store_(&store), alpha_(alpha) {
  require(alpha >= 0.0 && std::isfinite(alpha), ErrorCode::kInvalidArgument,
          "smoothing alpha must be finite and >= 0");
}

double NormalizedStoreView::lookup(std::size_t cls, BitKey key) const {
  return store_->lookup(cls, key, alpha_);
}

bool NormalizedStoreView::row_empty(std::size_t cls) const {
  return store_->row_total(cls) == 0;
}

double NormalizedStoreView::row_sum(std::size_t cls) const {
  if (row_empty(cls) && alpha_ == 0.0) return 0.0;
  // Unseen keys each carry alpha / (total + alpha 2^L) under smoothing.
  const double total = static_cast<double>(store_->row_total(cls));
  double sum = 0.0;
  for (const auto& [key, n] : store_->row(cls)) sum += lookup(cls, BitKey{key});
  if (alpha_ > 0.0) {
    const double space = std::ldexp(1.0, static_cast<int>(store_->config().key_bits()));
    const double unseen = space - static_cast<double>(store_->row(cls).size());
    sum += unseen * alpha_ / (total + alpha_ * space);
  }
  return sum;
}

std::vector<std::pair<std::uint64_t, double>> NormalizedStoreView::distribution(
    std::size_t cls) const {
  std::vector<std::pair<std::uint64_t, double>> out;
  for (const auto& [key, n] : store_->sorted_row(cls)) {
    out.emplace_back(key, lookup(cls, BitKey{key}));
  }
  return out;
}

NormalizedStoreView normalize_rows(const GcmlStore& store, double alpha) {
  return NormalizedStoreView(store, alpha);
}

DenseCounts::DenseCounts(std::size_t classes, std::size_t key_bits) : key_bits_(key_bits) {
  require(classes >= 1, ErrorCode::kInvalidArgument, "dense table needs at least one class");
  require(key_bits >= 1 && key_bits <= kMaxBits, ErrorCode::kInvalidArgument,
          "dense tables support 1..20 key bits, got " + std::to_string(key_bits));
  counts_.assign(classes, std::vector<std::uint64_t>(std::size_t{1} << key_bits, 0));
}

void DenseCounts::increment(std::size_t cls, BitKey key, std::uint64_t by) {
  require(cls < counts_.size(), ErrorCode::kOutOfRange, "class index out of range");
  require(key_fits(key.value, key_bits_), ErrorCode::kOutOfRange, "key out of range");
  counts_[cls][key.value] += by;
}

std::uint64_t DenseCounts::count(std::size_t cls, BitKey key) const {
  require(cls < counts_.size(), ErrorCode::kOutOfRange, "class index out of range");
  require(key_fits(key.value, key_bits_), ErrorCode::kOutOfRange, "key out of range");
  return counts_[cls][key.value];
}

DenseCounts& DenseCounts::operator+=(const DenseCounts& other) {
  require(other.key_bits_ == key_bits_ && other.counts_.size() == counts_.size(),
          ErrorCode::kConfigMismatch, "dense table shapes differ");
  for (std::size_t c = 0; c < counts_.size(); ++c) {
    for (std::size_t k = 0; k < counts_[c].size(); ++k) counts_[c][k] += other.counts_[c][k];
  }
  return *this;
}

FeatureMapStack fit_to_grid(const FeatureMapStack& features, const GcmlConfig& cfg) {
  if (features.height() == cfg.grid_h && features.width() == cfg.grid_w) return features;
  return downsample_avg(features, cfg.grid_h, cfg.grid_w);
}

std::uint64_t derive_sample_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over a mix of both inputs.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

FeatureMapStack jitter_features(const FeatureMapStack& features, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Offsets in {-1, 0, 1}; taken from raw engine output for portability.
  const auto dy = static_cast<long>(rng() % 3) - 1;
  const auto dx = static_cast<long>(rng() % 3) - 1;
  const auto h = static_cast<long>(features.height());
  const auto w = static_cast<long>(features.width());
  std::vector<float> out(features.values().size(), 0.0f);
  for (std::size_t k = 0; k < features.filters(); ++k) {
    for (long y = 0; y < h; ++y) {
      const long sy = y - dy;
      if (sy < 0 || sy >= h) continue;
      for (long x = 0; x < w; ++x) {
        const long sx = x - dx;
        if (sx < 0 || sx >= w) continue;
        out[(k * h + y) * w + x] = features.at(k, sy, sx);
      }
    }
  }
  return FeatureMapStack(features.filters(), features.height(), features.width(),
                         std::move(out));
}

BitKey train_update(GcmlStore& store, const FeatureMapStack& features,
                    const ClassifierHead& head, std::size_t label) {
  check_head_matches(store, head);
  require(label < store.num_classes(), ErrorCode::kOutOfRange,
          "label " + std::to_string(label) + " out of range for " +
              std::to_string(store.num_classes()) + " classes");
  require(!store.normalized(), ErrorCode::kFrozen, "store is finalized (normalized flag set)");
  const auto cam = compute_cam(fit_to_grid(features, store.config()), head, label);
  const auto key = attention_key(cam, store.config());
  store.increment(label, key);
  return key;
}

void train_epoch(GcmlStore& store, std::span<const TrainingSample> samples,
                 const ClassifierHead& head, const EpochOptions& options) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (options.augment_seed) {
      const auto seed = derive_sample_seed(*options.augment_seed, options.first_index + i);
      train_update(store, jitter_features(s.features, seed), head, s.label);
    } else {
      train_update(store, s.features, head, s.label);
    }
  }
}

void train_epoch(GcmlStore& store, const DatasetManifest& dataset, const ClassifierHead& head,
                 const EpochOptions& options) {
  dataset.validate();
  require(dataset.class_labels.size() == store.num_classes(), ErrorCode::kConfigMismatch,
          "dataset has " + std::to_string(dataset.class_labels.size()) +
              " classes but store has " + std::to_string(store.num_classes()));
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    auto features = FeatureMapStack::from_tensor(load_tensor(s.path));
    if (options.augment_seed) {
      features = jitter_features(
          features, derive_sample_seed(*options.augment_seed, options.first_index + i));
    }
    train_update(store, features, head, s.label);
  }
}

void train_epoch_parallel(GcmlStore& store, std::span<const TrainingSample> samples,
                          const ClassifierHead& head, const EpochOptions& options,
                          std::size_t threads) {
  check_head_matches(store, head);
  require(!store.normalized(), ErrorCode::kFrozen, "store is finalized (normalized flag set)");
  threads = std::max<std::size_t>(1, std::min(threads, samples.size()));
  if (threads <= 1) {
    train_epoch(store, samples, head, options);
    return;
  }

  const GcmlStore empty(store.classes(), store.config(), store.pooling());
  std::vector<GcmlStore> shards(threads, empty);
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t per = (samples.size() + threads - 1) / threads;
  {
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(samples.size(), t * per);
      const std::size_t end = std::min(samples.size(), begin + per);
      workers.emplace_back([&, t, begin, end] {
        try {
          EpochOptions shard_opts = options;
          shard_opts.first_index = options.first_index + begin;
          train_epoch(shards[t], samples.subspan(begin, end - begin), head, shard_opts);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (const auto& shard : shards) store = merge(store, shard);
}

DenseCounts train_dense_parallel(std::span<const TrainingSample> samples,
                                 const ClassifierHead& head, const GcmlConfig& cfg,
                                 std::size_t threads) {
  cfg.validate();
  threads = std::max<std::size_t>(1, threads);
  std::vector<DenseCounts> partial(threads, DenseCounts(head.classes, cfg.key_bits()));
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < samples.size(); i += threads) {
            const auto& s = samples[i];
            const auto cam = compute_cam(fit_to_grid(s.features, cfg), head, s.label);
            partial[t].increment(s.label, attention_key(cam, cfg));
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  DenseCounts total = partial.front();
  for (std::size_t t = 1; t < threads; ++t) total += partial[t];
  return total;
}

std::string_view to_string(FallbackPolicy policy) {
  return policy == FallbackPolicy::kCnnScore ? "cnn" : "first";
}

FallbackPolicy parse_fallback(std::string_view text) {
  if (text == "cnn") return FallbackPolicy::kCnnScore;
  if (text == "first") return FallbackPolicy::kFirstClass;
  fail(ErrorCode::kInvalidArgument, "unknown fallback policy '" + std::string(text) + "'");
}

Prediction predict_from_cams(std::span<const Cam> cams, std::vector<double> scores,
                             const GcmlStore& store, const PredictOptions& options) {
  const std::size_t classes = store.num_classes();
  require(cams.size() == classes && scores.size() == classes, ErrorCode::kConfigMismatch,
          "expected one map and one score per store class (" + std::to_string(classes) + ")");
  const NormalizedStoreView view(store, options.alpha);

  Prediction p;
  p.scores = std::move(scores);
  p.cnn_class = argmax_score(p.scores);
  p.keys.reserve(classes);
  p.likelihoods.reserve(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    p.keys.push_back(attention_key(cams[c], store.config()));
    p.likelihoods.push_back(view.lookup(c, p.keys.back()));
  }

  const auto best = std::max_element(p.likelihoods.begin(), p.likelihoods.end());
  if (*best > 0.0) {
    p.class_index = static_cast<std::size_t>(best - p.likelihoods.begin());
  } else {
    p.fallback_used = true;
    p.class_index = options.fallback == FallbackPolicy::kCnnScore ? p.cnn_class : 0;
  }
  return p;
}

Prediction predict(const FeatureMapStack& features, const ClassifierHead& head,
                   const GcmlStore& store, const PredictOptions& options) {
  check_head_matches(store, head);
  const auto reduced = fit_to_grid(features, store.config());
  const auto cams = compute_cams(reduced, head);
  return predict_from_cams(cams, class_scores(features, head), store, options);
}

GcmlStore merge(const GcmlStore& a, const GcmlStore& b) {
  require(a.compatible_with(b), ErrorCode::kConfigMismatch,
          "cannot merge stores with different tau, key length, bit order, pooling or classes");
  require(!a.normalized() && !b.normalized(), ErrorCode::kFrozen,
          "cannot merge finalized (normalized) stores");
  GcmlStore out = a;
  for (std::size_t c = 0; c < b.num_classes(); ++c) {
    for (const auto& [key, n] : b.row(c)) out.increment(c, BitKey{key}, n);
  }
  return out;
}

void save_store(const GcmlStore& store, std::ostream& out) {
  store.validate();
  const auto& cfg = store.config();
  out.write(kStoreMagic, sizeof kStoreMagic);
  detail::put_le<std::uint16_t>(out, kStoreVersion);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(cfg.key_bits()));
  detail::put_f32(out, cfg.tau);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(cfg.bit_order));
  detail::put_le<std::uint8_t>(out, store.normalized() ? 1 : 0);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(store.pooling()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.num_classes()));
  for (const auto& label : store.classes()) {
    require(label.size() <= std::numeric_limits<std::uint16_t>::max(),
            ErrorCode::kInvalidArgument, "class label longer than 65535 bytes");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(label.size()));
    out.write(label.data(), static_cast<std::streamsize>(label.size()));
  }
  for (std::size_t c = 0; c < store.num_classes(); ++c) {
    const auto entries = store.sorted_row(c);
    detail::put_le<std::uint64_t>(out, store.row_total(c));
    detail::put_le<std::uint64_t>(out, entries.size());
    for (const auto& [key, n] : entries) {
      detail::put_le<std::uint64_t>(out, key);
      detail::put_le<std::uint64_t>(out, n);
    }
  }
  detail::check_stream(out, "store");
}

GcmlStore load_store(std::istream& in) {
  char magic[4];
  detail::read_exact(in, magic, sizeof magic, "store magic");
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kStoreMagic))) {
    fail(ErrorCode::kBadMagic, "not a GCS1 store (bad magic)");
  }
  const auto version = detail::get_le<std::uint16_t>(in, "store version");
  if (version != kStoreVersion) {
    fail(ErrorCode::kUnsupported, "unsupported store version " + std::to_string(version));
  }
  const auto bits = detail::get_le<std::uint8_t>(in, "key length");
  require(bits >= 1 && bits <= kMaxKeyBits, ErrorCode::kCorrupt,
          "store key length " + std::to_string(bits) + " outside 1..64");
  GcmlConfig cfg;
  cfg.tau = detail::get_f32(in, "tau");
  require(cfg.tau >= 0.0f && cfg.tau <= 1.0f, ErrorCode::kCorrupt, "store tau outside [0, 1]");
  const auto order = detail::get_le<std::uint8_t>(in, "bit order");
  require(order <= 1, ErrorCode::kCorrupt, "invalid bit order code");
  cfg.bit_order = static_cast<BitOrder>(order);
  const auto normalized = detail::get_le<std::uint8_t>(in, "normalized flag");
  require(normalized <= 1, ErrorCode::kCorrupt, "invalid normalized flag");
  const auto pooling = detail::get_le<std::uint8_t>(in, "pooling mode");
  require(pooling <= 1, ErrorCode::kCorrupt, "invalid pooling mode code");
  cfg = grid_for_bits(bits, cfg);

  const auto classes = detail::get_le<std::uint32_t>(in, "class count");
  require(classes >= 1, ErrorCode::kCorrupt, "store declares zero classes");
  std::vector<std::string> labels;
  for (std::uint32_t c = 0; c < classes; ++c) {
    const auto len = detail::get_le<std::uint16_t>(in, "label length");
    std::string label(len, '\0');
    detail::read_exact(in, label.data(), len, "label");
    labels.push_back(std::move(label));
  }

  GcmlStore store(std::move(labels), cfg, static_cast<PoolingMode>(pooling));
  for (std::uint32_t c = 0; c < classes; ++c) {
    const auto declared_total = detail::get_le<std::uint64_t>(in, "row total");
    const auto entries = detail::get_le<std::uint64_t>(in, "entry count");
    std::uint64_t sum = 0;
    std::optional<std::uint64_t> previous;
    for (std::uint64_t e = 0; e < entries; ++e) {
      const auto key = detail::get_le<std::uint64_t>(in, "entry key");
      const auto n = detail::get_le<std::uint64_t>(in, "entry count");
      require(!previous || key > *previous, ErrorCode::kCorrupt,
              "row " + std::to_string(c) + " keys are not strictly ascending");
      require(key_fits(key, bits), ErrorCode::kCorrupt,
              "row " + std::to_string(c) + " key wider than L bits");
      require(n >= 1, ErrorCode::kCorrupt, "row " + std::to_string(c) + " holds a zero count");
      require(sum <= std::numeric_limits<std::uint64_t>::max() - n, ErrorCode::kCorrupt,
              "row " + std::to_string(c) + " count overflow");
      previous = key;
      sum += n;
      store.increment(c, BitKey{key}, n);
    }
    require(sum == declared_total, ErrorCode::kCorrupt,
            "row " + std::to_string(c) + " total " + std::to_string(declared_total) +
                " does not equal summed counts " + std::to_string(sum));
  }
  store.set_normalized(normalized == 1);
  return store;
}

void save_store(const GcmlStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  save_store(store, out);
  out.flush();
  detail::check_stream(out, path.string().c_str());
}

GcmlStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  auto store = load_store(in);
  require(detail::at_end(in), ErrorCode::kCorrupt, "trailing bytes after store in " + path.string());
  return store;
}

}  // namespace gcml
