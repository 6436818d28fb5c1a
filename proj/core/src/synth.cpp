#include "gcml/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <random>

namespace gcml::synth {

void SpatialClassSpec::validate() const {
  require(grid_h >= 1 && grid_w >= 1, ErrorCode::kInvalidArgument, "grid dims must be >= 1");
  require(!layouts.empty(), ErrorCode::kInvalidArgument, "spec needs at least one class");
  require(class_labels.empty() || class_labels.size() == layouts.size(),
          ErrorCode::kInvalidArgument, "class label count does not match layout count");
  require(noise_sigma >= 0.0f, ErrorCode::kInvalidArgument, "noise sigma must be >= 0");
  require(jitter_prob >= 0.0f && jitter_prob <= 1.0f, ErrorCode::kInvalidArgument,
          "jitter probability must lie in [0, 1]");
  for (std::size_t c = 0; c < layouts.size(); ++c) {
    require(!layouts[c].empty(), ErrorCode::kInvalidArgument,
            "class " + std::to_string(c) + " has no layouts");
    for (const auto& layout : layouts[c]) {
      require(!layout.empty(), ErrorCode::kInvalidArgument,
              "class " + std::to_string(c) + " has an empty layout");
      for (const auto& b : layout) {
        require(b.row < grid_h && b.col < grid_w, ErrorCode::kInvalidArgument,
                "blob coordinate outside the grid");
        require(b.intensity > 0.0f, ErrorCode::kInvalidArgument,
                "blob intensities must be positive");
      }
    }
  }
}

SpatialClassSpec diagonal_spec(float noise_sigma, float jitter_prob) {
  SpatialClassSpec spec;
  spec.class_labels = {"diag", "anti"};
  spec.layouts = {
      {{{0, 0, 1.0f}, {3, 3, 1.0f}}},
      {{{0, 3, 1.0f}, {3, 0, 1.0f}}},
  };
  spec.noise_sigma = noise_sigma;
  spec.jitter_prob = jitter_prob;
  return spec;
}

SpatialClassSpec paired_corner_spec(float noise_sigma, float jitter_prob) {
  const Blob tl{0, 0, 1.0f}, br{3, 3, 1.0f}, tr{0, 3, 1.0f}, bl{3, 0, 1.0f};
  SpatialClassSpec spec;
  spec.class_labels = {"xor_a", "xor_b"};
  spec.layouts = {
      {{tl, br}, {tr, bl}},
      {{tl, tr}, {bl, br}},
  };
  spec.noise_sigma = noise_sigma;
  spec.jitter_prob = jitter_prob;
  return spec;
}

SpatialClassSpec three_class_spec(float noise_sigma, float jitter_prob) {
  SpatialClassSpec spec;
  spec.class_labels = {"diag", "anti", "top"};
  spec.layouts = {
      {{{0, 0, 1.0f}, {3, 3, 1.0f}}},
      {{{0, 3, 1.0f}, {3, 0, 1.0f}}},
      {{{0, 0, 1.0f}, {0, 3, 1.0f}}},
  };
  spec.noise_sigma = noise_sigma;
  spec.jitter_prob = jitter_prob;
  return spec;
}

SynthDataset gen_spatial_classes(const SpatialClassSpec& spec, std::uint64_t seed,
                                 std::size_t n_per_class) {
  spec.validate();
  SynthDataset ds;
  ds.seed = seed;
  ds.class_labels = spec.class_labels;
  if (ds.class_labels.empty()) {
    for (std::size_t c = 0; c < spec.layouts.size(); ++c) {
      ds.class_labels.push_back("class" + std::to_string(c));
    }
  }

  const long h = static_cast<long>(spec.grid_h);
  const long w = static_cast<long>(spec.grid_w);
  constexpr long kDy[4] = {-1, 1, 0, 0};
  constexpr long kDx[4] = {0, 0, -1, 1};

  std::size_t index = 0;
  for (std::size_t c = 0; c < spec.layouts.size(); ++c) {
    for (std::size_t n = 0; n < n_per_class; ++n, ++index) {
      std::mt19937_64 rng(derive_sample_seed(seed, index));
      std::normal_distribution<double> noise(0.0, spec.noise_sigma);
      std::uniform_real_distribution<double> unit(0.0, 1.0);

      const auto& options = spec.layouts[c];
      const auto& layout = options[rng() % options.size()];
      std::vector<float> values(spec.grid_h * spec.grid_w, 0.0f);
      for (const auto& blob : layout) {
        long y = static_cast<long>(blob.row);
        long x = static_cast<long>(blob.col);
        if (spec.jitter_prob > 0.0f && unit(rng) < spec.jitter_prob) {
          const auto dir = rng() % 4;
          const long ny = y + kDy[dir];
          const long nx = x + kDx[dir];
          if (ny >= 0 && ny < h && nx >= 0 && nx < w) {
            y = ny;
            x = nx;
          }
        }
        double v = blob.intensity;
        if (spec.noise_sigma > 0.0f) v += noise(rng);
        values[static_cast<std::size_t>(y * w + x)] += static_cast<float>(std::max(0.0, v));
      }
      ds.samples.push_back({FeatureMapStack(1, spec.grid_h, spec.grid_w, std::move(values)), c});
    }
  }
  return ds;
}

ClassifierHead unit_head(std::size_t classes, PoolingMode pooling) {
  return ClassifierHead(classes, 1, std::vector<float>(classes, 1.0f), std::nullopt, pooling);
}

GcmlStore oracle_store(std::span<const TrainingSample> samples, const ClassifierHead& head,
                       const GcmlConfig& cfg, std::span<const std::string> class_labels) {
  cfg.validate();
  const std::size_t H = cfg.grid_h;
  const std::size_t W = cfg.grid_w;
  const std::size_t L = H * W;

  std::map<std::pair<std::size_t, std::uint64_t>, std::uint64_t> tally;
  for (const auto& s : samples) {
    const auto& f = s.features;
    require(f.height() == H && f.width() == W, ErrorCode::kDimensionMismatch,
            "oracle expects feature stacks already at grid resolution");
    require(f.filters() == head.filters, ErrorCode::kDimensionMismatch,
            "oracle: filter count mismatch");

    std::vector<float> cam(L);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < f.filters(); ++k) {
          acc += static_cast<double>(head.weights[s.label * head.filters + k]) *
                 static_cast<double>(f.at(k, y, x));
        }
        cam[y * W + x] = static_cast<float>(acc);
      }
    }

    float lo = cam[0];
    float hi = cam[0];
    for (std::size_t i = 1; i < L; ++i) {
      if (cam[i] < lo) lo = cam[i];
      if (cam[i] > hi) hi = cam[i];
    }

    std::uint64_t key = 0;
    for (std::size_t i = 0; i < L; ++i) {
      const float normalized = hi == lo ? 0.0f : (cam[i] - lo) / (hi - lo);
      if (normalized >= cfg.tau) {
        const std::size_t bit = cfg.bit_order == BitOrder::kLittle ? i : L - 1 - i;
        key += std::uint64_t{1} << bit;
      }
    }
    ++tally[{s.label, key}];
  }

  std::vector<std::string> labels(class_labels.begin(), class_labels.end());
  GcmlStore store(labels, cfg, head.pooling);
  for (const auto& [cell, n] : tally) store.increment(cell.first, BitKey{cell.second}, n);
  return store;
}

double additive_baseline(std::span<const TrainingSample> samples, const ClassifierHead& head) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    if (argmax_score(class_scores(s.features, head)) == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double gcml_accuracy(std::span<const TrainingSample> samples, const ClassifierHead& head,
                     const GcmlStore& store, const PredictOptions& options) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    if (predict(s.features, head, store, options).class_index == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

DatasetManifest export_dataset(const SynthDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest manifest;
  manifest.class_labels = dataset.class_labels;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%06zu.gct", i);
    const auto path = dir / name;
    save_tensor(dataset.samples[i].features.to_tensor(), path);
    manifest.samples.push_back({path, dataset.samples[i].label});
  }
  write_manifest(manifest, dir / "manifest.json");
  return manifest;
}

}  // namespace gcml::synth
