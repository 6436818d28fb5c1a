#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gcml/store.hpp"

namespace gcml::synth {

struct Blob {
  std::size_t row = 0;
  std::size_t col = 0;
  float intensity = 1.0f;
};

using Layout = std::vector<Blob>;

// Classes that differ only in where activation sits on the grid. Each class
// owns one or more layouts; a sample draws one of its class's layouts
// uniformly, perturbs blob intensities with N(0, noise_sigma) and moves each
// blob one cell in a random direction with probability jitter_prob.
struct SpatialClassSpec {
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  std::vector<std::string> class_labels;
  std::vector<std::vector<Layout>> layouts;  // [class][alternative]
  float noise_sigma = 0.0f;
  float jitter_prob = 0.0f;

  void validate() const;
};

struct SynthDataset {
  std::vector<TrainingSample> samples;
  std::vector<std::string> class_labels;
  std::uint64_t seed = 0;
};

// Two classes on 4x4: blobs on the main diagonal corners vs. the
// anti-diagonal corners.
SpatialClassSpec diagonal_spec(float noise_sigma = 0.05f, float jitter_prob = 0.0f);

// Two classes on 4x4 sharing the same four corner cells. Class "xor_a" lights
// a diagonal pair (either diagonal); class "xor_b" lights a row pair (top or
// bottom). Every single cell is equally likely in both classes, so only the
// joint pattern separates them.
SpatialClassSpec paired_corner_spec(float noise_sigma = 0.05f, float jitter_prob = 0.0f);

// Three classes on 4x4 with distinct two-blob arrangements of equal mass.
SpatialClassSpec three_class_spec(float noise_sigma = 0.1f, float jitter_prob = 0.2f);

// Samples ordered class-major: n_per_class of class 0, then class 1, ...
// Sample i is generated from derive_sample_seed(seed, i), so generation is
// independent of thread count and order.
SynthDataset gen_spatial_classes(const SpatialClassSpec& spec, std::uint64_t seed,
                                 std::size_t n_per_class);

// k = 1 head with weight 1 for every class and no bias.
ClassifierHead unit_head(std::size_t classes, PoolingMode pooling = PoolingMode::kSum);

// Reference store built with plain loops, sharing no code with the store
// module's keying path (CAM, normalization, threshold and key arithmetic are
// all recomputed here).
GcmlStore oracle_store(std::span<const TrainingSample> samples, const ClassifierHead& head,
                       const GcmlConfig& cfg, std::span<const std::string> class_labels);

// Accuracy of argmax_c S_c, the additive CNN decision.
double additive_baseline(std::span<const TrainingSample> samples, const ClassifierHead& head);

// Accuracy of GCML predictions against the sample labels.
double gcml_accuracy(std::span<const TrainingSample> samples, const ClassifierHead& head,
                     const GcmlStore& store, const PredictOptions& options = {});

// Writes one GCT1 file per sample plus a manifest at dir/manifest.json.
DatasetManifest export_dataset(const SynthDataset& dataset, const std::filesystem::path& dir);

}  // namespace gcml::synth
