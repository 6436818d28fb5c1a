#include "gcml/cam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "json.hpp"

namespace gcml {

namespace {

bool all_finite(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

void check_divisible(std::size_t h, std::size_t w, std::size_t th, std::size_t tw) {
  require(th >= 1 && tw >= 1, ErrorCode::kInvalidArgument, "target dims must be >= 1");
  require(th <= h && tw <= w, ErrorCode::kDimensionMismatch,
          "cannot downsample " + std::to_string(h) + "x" + std::to_string(w) + " to larger " +
              std::to_string(th) + "x" + std::to_string(tw));
  require(h % th == 0 && w % tw == 0, ErrorCode::kDimensionMismatch,
          "source " + std::to_string(h) + "x" + std::to_string(w) +
              " is not an integer multiple of target " + std::to_string(th) + "x" +
              std::to_string(tw));
}

// Pools one h x w plane into th x tw; accumulation in double.
void pool_plane(const float* src, std::size_t h, std::size_t w, float* dst, std::size_t th,
                std::size_t tw) {
  const std::size_t wy = h / th;
  const std::size_t wx = w / tw;
  const double inv = 1.0 / static_cast<double>(wy * wx);
  for (std::size_t ty = 0; ty < th; ++ty) {
    for (std::size_t tx = 0; tx < tw; ++tx) {
      double acc = 0.0;
      for (std::size_t y = ty * wy; y < (ty + 1) * wy; ++y) {
        for (std::size_t x = tx * wx; x < (tx + 1) * wx; ++x) acc += src[y * w + x];
      }
      dst[ty * tw + tx] = static_cast<float>(acc * inv);
    }
  }
}

void check_compatible(const FeatureMapStack& features, const ClassifierHead& head,
                      std::size_t c) {
  require(head.filters == features.filters(), ErrorCode::kDimensionMismatch,
          "head expects " + std::to_string(head.filters) + " filters but feature stack has " +
              std::to_string(features.filters()));
  require(c < head.classes, ErrorCode::kOutOfRange,
          "class index " + std::to_string(c) + " out of range for " +
              std::to_string(head.classes) + " classes");
}

}  // namespace

FeatureMapStack::FeatureMapStack(std::size_t filters, std::size_t height, std::size_t width,
                                 std::vector<float> values)
    : filters_(filters), height_(height), width_(width), values_(std::move(values)) {
  require(filters >= 1 && height >= 1 && width >= 1, ErrorCode::kInvalidArgument,
          "feature stack dims must be >= 1");
  require(values_.size() == filters * height * width, ErrorCode::kDimensionMismatch,
          "feature stack value count does not match k*h*w");
  require(all_finite(values_), ErrorCode::kInvalidArgument,
          "feature stack contains non-finite values");
}

FeatureMapStack FeatureMapStack::from_tensor(const TensorF32& tensor) {
  tensor.validate();
  if (tensor.ndim() == 2) {
    return FeatureMapStack(1, tensor.shape[0], tensor.shape[1], tensor.data);
  }
  require(tensor.ndim() == 3, ErrorCode::kDimensionMismatch,
          "feature stack tensor must have shape [k,h,w], got ndim " +
              std::to_string(tensor.ndim()));
  return FeatureMapStack(tensor.shape[0], tensor.shape[1], tensor.shape[2], tensor.data);
}

TensorF32 FeatureMapStack::to_tensor() const {
  return TensorF32({static_cast<std::uint32_t>(filters_), static_cast<std::uint32_t>(height_),
                    static_cast<std::uint32_t>(width_)},
                   values_);
}

std::string_view to_string(PoolingMode mode) {
  return mode == PoolingMode::kSum ? "sum" : "mean";
}

PoolingMode parse_pooling_mode(std::string_view text) {
  if (text == "sum") return PoolingMode::kSum;
  if (text == "mean") return PoolingMode::kMean;
  fail(ErrorCode::kInvalidArgument, "unknown pooling mode '" + std::string(text) + "'");
}

ClassifierHead::ClassifierHead(std::size_t c, std::size_t k, std::vector<float> w,
                               std::optional<std::vector<float>> b, PoolingMode p)
    : classes(c), filters(k), weights(std::move(w)), bias(std::move(b)), pooling(p) {
  validate();
}

void ClassifierHead::validate() const {
  require(classes >= 1 && filters >= 1, ErrorCode::kInvalidArgument,
          "head must have at least one class and one filter");
  require(weights.size() == classes * filters, ErrorCode::kDimensionMismatch,
          "head weight count does not match classes*filters");
  require(all_finite(weights), ErrorCode::kInvalidArgument, "head weights are not finite");
  if (bias) {
    require(bias->size() == classes, ErrorCode::kDimensionMismatch,
            "head bias length does not match class count");
    require(all_finite(*bias), ErrorCode::kInvalidArgument, "head bias is not finite");
  }
}

ClassifierHead load_head(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  require(static_cast<bool>(in), ErrorCode::kIo,
          "cannot open head manifest " + manifest_path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorrupt, "head manifest is not valid JSON: " + std::string(e.what()));
  }
  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path = p;
    return path.is_absolute() ? path : base / path;
  };

  try {
    const auto weights = load_tensor(resolve(doc.at("weights").get<std::string>()));
    require(weights.ndim() == 2, ErrorCode::kDimensionMismatch,
            "head weights must be a [c,k] tensor");
    std::optional<std::vector<float>> bias;
    if (doc.contains("bias") && !doc["bias"].is_null()) {
      auto b = load_tensor(resolve(doc["bias"].get<std::string>()));
      require(b.ndim() == 1, ErrorCode::kDimensionMismatch, "head bias must be a [c] tensor");
      bias = std::move(b.data);
    }
    PoolingMode pooling = PoolingMode::kSum;
    if (doc.contains("pooling_mode")) {
      pooling = parse_pooling_mode(doc["pooling_mode"].get<std::string>());
    }
    return ClassifierHead(weights.shape[0], weights.shape[1], weights.data, std::move(bias),
                          pooling);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorrupt, "head manifest " + manifest_path.string() + ": " + e.what());
  }
}

void save_head(const ClassifierHead& head, const std::filesystem::path& manifest_path) {
  head.validate();
  const auto base = manifest_path.parent_path();
  const auto stem = manifest_path.stem().string();
  const std::string weights_name = stem + "_weights.gct";
  save_tensor(TensorF32({static_cast<std::uint32_t>(head.classes),
                         static_cast<std::uint32_t>(head.filters)},
                        head.weights),
              base / weights_name);

  nlohmann::json doc;
  doc["weights"] = weights_name;
  if (head.bias) {
    const std::string bias_name = stem + "_bias.gct";
    save_tensor(TensorF32({static_cast<std::uint32_t>(head.classes)}, *head.bias),
                base / bias_name);
    doc["bias"] = bias_name;
  } else {
    doc["bias"] = nullptr;
  }
  doc["pooling_mode"] = std::string(to_string(head.pooling));

  std::ofstream out(manifest_path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo,
          "cannot open " + manifest_path.string() + " for writing");
  out << doc.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + manifest_path.string());
}

double class_score(const FeatureMapStack& features, const ClassifierHead& head, std::size_t c) {
  check_compatible(features, head, c);
  const std::size_t plane = features.plane_size();
  const float* v = features.values().data();
  double score = 0.0;
  for (std::size_t k = 0; k < head.filters; ++k) {
    double pooled = 0.0;
    for (std::size_t i = 0; i < plane; ++i) pooled += v[k * plane + i];
    if (head.pooling == PoolingMode::kMean) pooled /= static_cast<double>(plane);
    score += static_cast<double>(head.weight(c, k)) * pooled;
  }
  if (head.bias) score += (*head.bias)[c];
  return score;
}

std::vector<double> class_scores(const FeatureMapStack& features, const ClassifierHead& head) {
  std::vector<double> scores(head.classes);
  for (std::size_t c = 0; c < head.classes; ++c) scores[c] = class_score(features, head, c);
  return scores;
}

std::size_t argmax_score(const std::vector<double>& scores) {
  require(!scores.empty(), ErrorCode::kInvalidArgument, "argmax of an empty score vector");
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) -
                                  scores.begin());
}

Cam compute_cam(const FeatureMapStack& features, const ClassifierHead& head, std::size_t c) {
  check_compatible(features, head, c);
  const std::size_t plane = features.plane_size();
  const float* v = features.values().data();
  std::vector<double> acc(plane, 0.0);
  for (std::size_t k = 0; k < head.filters; ++k) {
    const double w = head.weight(c, k);
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < plane; ++i) acc[i] += w * v[k * plane + i];
  }
  Cam cam{features.height(), features.width(), std::vector<float>(plane), c};
  std::transform(acc.begin(), acc.end(), cam.values.begin(),
                 [](double x) { return static_cast<float>(x); });
  return cam;
}

std::vector<Cam> compute_cams(const FeatureMapStack& features, const ClassifierHead& head) {
  std::vector<Cam> cams;
  cams.reserve(head.classes);
  for (std::size_t c = 0; c < head.classes; ++c) cams.push_back(compute_cam(features, head, c));
  return cams;
}

Cam downsample_avg(const Cam& cam, std::size_t target_h, std::size_t target_w) {
  check_divisible(cam.height, cam.width, target_h, target_w);
  Cam out{target_h, target_w, std::vector<float>(target_h * target_w), cam.class_index};
  pool_plane(cam.values.data(), cam.height, cam.width, out.values.data(), target_h, target_w);
  return out;
}

FeatureMapStack downsample_avg(const FeatureMapStack& stack, std::size_t target_h,
                               std::size_t target_w) {
  check_divisible(stack.height(), stack.width(), target_h, target_w);
  const std::size_t out_plane = target_h * target_w;
  std::vector<float> out(stack.filters() * out_plane);
  for (std::size_t k = 0; k < stack.filters(); ++k) {
    pool_plane(stack.values().data() + k * stack.plane_size(), stack.height(), stack.width(),
               out.data() + k * out_plane, target_h, target_w);
  }
  return FeatureMapStack(stack.filters(), target_h, target_w, std::move(out));
}

Cam minmax_normalize(const Cam& cam) {
  require(!cam.values.empty(), ErrorCode::kInvalidArgument, "cannot normalize an empty map");
  require(all_finite(cam.values), ErrorCode::kInvalidArgument, "map contains non-finite values");
  const auto [lo_it, hi_it] = std::minmax_element(cam.values.begin(), cam.values.end());
  const float lo = *lo_it;
  const float hi = *hi_it;
  Cam out = cam;
  if (hi == lo) {
    std::fill(out.values.begin(), out.values.end(), 0.0f);
    return out;
  }
  const float range = hi - lo;
  for (float& v : out.values) v = (v - lo) / range;
  return out;
}

TensorF32 upsample_bilinear(const Cam& cam, std::size_t out_h, std::size_t out_w) {
  require(cam.height >= 1 && cam.width >= 1, ErrorCode::kInvalidArgument, "empty map");
  require(out_h >= cam.height && out_w >= cam.width, ErrorCode::kDimensionMismatch,
          "upsample target must not be smaller than the map");
  // Corner alignment: output (0,0) and (out-1,out-1) sample the source corners.
  auto source_coord = [](std::size_t o, std::size_t src, std::size_t dst) {
    return dst > 1 ? static_cast<double>(o * (src - 1)) / static_cast<double>(dst - 1) : 0.0;
  };

  std::vector<float> out(out_h * out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double fy = source_coord(oy, cam.height, out_h);
    const auto y0 = std::min(static_cast<std::size_t>(fy), cam.height - 1);
    const auto y1 = std::min(y0 + 1, cam.height - 1);
    const double dy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double fx = source_coord(ox, cam.width, out_w);
      const auto x0 = std::min(static_cast<std::size_t>(fx), cam.width - 1);
      const auto x1 = std::min(x0 + 1, cam.width - 1);
      const double dx = fx - static_cast<double>(x0);
      const double top = (1.0 - dx) * cam.at(y0, x0) + dx * cam.at(y0, x1);
      const double bottom = (1.0 - dx) * cam.at(y1, x0) + dx * cam.at(y1, x1);
      out[oy * out_w + ox] = static_cast<float>((1.0 - dy) * top + dy * bottom);
    }
  }
  return TensorF32({static_cast<std::uint32_t>(out_h), static_cast<std::uint32_t>(out_w)},
                   std::move(out));
}

}  // namespace gcml
