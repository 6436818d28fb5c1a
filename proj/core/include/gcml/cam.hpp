#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "gcml/tensorio.hpp"

namespace gcml {

// Last-conv-layer activations f_k(x, y): `filters` maps of height x width,
// stored filter-major then row-major ([k][y][x]).
class FeatureMapStack {
 public:
  FeatureMapStack() = default;
  FeatureMapStack(std::size_t filters, std::size_t height, std::size_t width,
                  std::vector<float> values);

  // Accepts a GCT1 tensor of shape [k, h, w] (or [h, w], read as k = 1).
  static FeatureMapStack from_tensor(const TensorF32& tensor);
  TensorF32 to_tensor() const;

  std::size_t filters() const { return filters_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t plane_size() const { return height_ * width_; }

  float at(std::size_t k, std::size_t y, std::size_t x) const {
    return values_[(k * height_ + y) * width_ + x];
  }
  float& at(std::size_t k, std::size_t y, std::size_t x) {
    return values_[(k * height_ + y) * width_ + x];
  }
  const std::vector<float>& values() const { return values_; }

  friend bool operator==(const FeatureMapStack&, const FeatureMapStack&) = default;

 private:
  std::size_t filters_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> values_;
};

// How the classifier pools each feature map into F_k before the linear layer.
// `sum` is F_k = sum_{x,y} f_k(x,y); `mean` divides by h*w.
enum class PoolingMode : std::uint8_t { kSum = 0, kMean = 1 };

std::string_view to_string(PoolingMode mode);
PoolingMode parse_pooling_mode(std::string_view text);

// Final linear layer: weights[c][k] = w_k^c, optional per-class bias.
struct ClassifierHead {
  std::size_t classes = 0;
  std::size_t filters = 0;
  std::vector<float> weights;
  std::optional<std::vector<float>> bias;
  PoolingMode pooling = PoolingMode::kSum;

  ClassifierHead() = default;
  ClassifierHead(std::size_t classes, std::size_t filters, std::vector<float> weights,
                 std::optional<std::vector<float>> bias = std::nullopt,
                 PoolingMode pooling = PoolingMode::kSum);

  float weight(std::size_t c, std::size_t k) const { return weights[c * filters + k]; }
  void validate() const;

  friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

// Head manifest (JSON): {"weights": "w.gct", "bias": "b.gct" | null,
// "pooling_mode": "sum" | "mean"}. Tensor paths are relative to the manifest.
ClassifierHead load_head(const std::filesystem::path& manifest_path);

// Writes <stem>_weights.gct (and <stem>_bias.gct) next to the manifest.
void save_head(const ClassifierHead& head, const std::filesystem::path& manifest_path);

// Class activation map M_c for one class.
struct Cam {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;
  std::size_t class_index = 0;

  float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  float& at(std::size_t y, std::size_t x) { return values[y * width + x]; }

  friend bool operator==(const Cam&, const Cam&) = default;
};

// S_c = sum_k w_k^c F_k + b_c.
double class_score(const FeatureMapStack& features, const ClassifierHead& head, std::size_t c);
std::vector<double> class_scores(const FeatureMapStack& features, const ClassifierHead& head);

// Index of the largest score; ties go to the lowest index.
std::size_t argmax_score(const std::vector<double>& scores);

// M_c(x, y) = sum_k w_k^c f_k(x, y). The bias never enters the map.
Cam compute_cam(const FeatureMapStack& features, const ClassifierHead& head, std::size_t c);
std::vector<Cam> compute_cams(const FeatureMapStack& features, const ClassifierHead& head);

// Non-overlapping average pooling with window (h / target_h, w / target_w).
// Source dims must be integer multiples of the target dims.
Cam downsample_avg(const Cam& cam, std::size_t target_h, std::size_t target_w);
FeatureMapStack downsample_avg(const FeatureMapStack& stack, std::size_t target_h,
                               std::size_t target_w);

// (v - min) / (max - min); a constant map becomes all zeros.
Cam minmax_normalize(const Cam& cam);

// Corner-aligned bilinear resize to [out_h, out_w].
TensorF32 upsample_bilinear(const Cam& cam, std::size_t out_h, std::size_t out_w);

}  // namespace gcml
