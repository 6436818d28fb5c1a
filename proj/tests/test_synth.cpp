#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "gcml/synth.hpp"
#include "test_util.hpp"

using namespace gcml;
using namespace gcml::synth;

namespace {

double total_activation(const FeatureMapStack& f) {
  double s = 0.0;
  for (float v : f.values()) s += v;
  return s;
}

std::string dataset_bytes(const SynthDataset& ds) {
  std::ostringstream out(std::ios::binary);
  for (const auto& s : ds.samples) {
    write_tensor(s.features.to_tensor(), out);
    out << s.label;
  }
  return out.str();
}

GcmlConfig grid4(float tau) {
  GcmlConfig cfg;
  cfg.tau = tau;
  return cfg;
}

}  // namespace

TEST_CASE("diagonal spec: equal sums and fixed keys without noise") {
  const auto clean = gen_spatial_classes(diagonal_spec(0.0f, 0.0f), 1, 20);
  REQUIRE(clean.samples.size() == 40);
  for (const auto& s : clean.samples) CHECK(total_activation(s.features) == 2.0);

  std::set<std::uint64_t> keys_a, keys_b;
  for (const auto& s : clean.samples) {
    const Cam cam{4, 4, s.features.values(), 0};
    (s.label == 0 ? keys_a : keys_b).insert(attention_key(cam, grid4(0.5f)).value);
  }
  CHECK(keys_a == std::set<std::uint64_t>{(1u << 0) | (1u << 15)});
  CHECK(keys_b == std::set<std::uint64_t>{(1u << 3) | (1u << 12)});

  // With noise the sums still agree in expectation across classes.
  const auto noisy = gen_spatial_classes(diagonal_spec(0.1f, 0.0f), 2, 500);
  double sum_a = 0.0, sum_b = 0.0;
  for (const auto& s : noisy.samples) (s.label == 0 ? sum_a : sum_b) += total_activation(s.features);
  CHECK(std::abs(sum_a / 500 - sum_b / 500) < 0.05);
}

TEST_CASE("generator determinism") {
  const auto spec = paired_corner_spec(0.1f, 0.3f);
  CHECK(dataset_bytes(gen_spatial_classes(spec, 9, 50)) ==
        dataset_bytes(gen_spatial_classes(spec, 9, 50)));
  CHECK(dataset_bytes(gen_spatial_classes(spec, 9, 50)) !=
        dataset_bytes(gen_spatial_classes(spec, 10, 50)));
}

TEST_CASE("paired spec uses every layout and jitter moves blobs") {
  const auto ds = gen_spatial_classes(paired_corner_spec(0.0f, 0.0f), 3, 200);
  std::set<std::uint64_t> keys_a, keys_b;
  for (const auto& s : ds.samples) {
    const Cam cam{4, 4, s.features.values(), 0};
    (s.label == 0 ? keys_a : keys_b).insert(attention_key(cam, grid4(0.5f)).value);
  }
  CHECK(keys_a.size() == 2);
  CHECK(keys_b.size() == 2);

  const auto jittered = gen_spatial_classes(paired_corner_spec(0.0f, 1.0f), 3, 200);
  std::set<std::uint64_t> moved;
  for (const auto& s : jittered.samples) {
    const Cam cam{4, 4, s.features.values(), 0};
    moved.insert(attention_key(cam, grid4(0.5f)).value);
  }
  CHECK(moved.size() > 4);
}

TEST_CASE("spec validation") {
  auto spec = diagonal_spec();
  spec.layouts[0][0][0].row = 4;
  CHECK_GCML_ERROR(spec.validate(), ErrorCode::kInvalidArgument);
  spec = diagonal_spec();
  spec.layouts[1][0][1].intensity = 0.0f;
  CHECK_GCML_ERROR(spec.validate(), ErrorCode::kInvalidArgument);
  spec = diagonal_spec();
  spec.jitter_prob = 2.0f;
  CHECK_GCML_ERROR(spec.validate(), ErrorCode::kInvalidArgument);
  spec = diagonal_spec();
  spec.layouts.clear();
  CHECK_GCML_ERROR(spec.validate(), ErrorCode::kInvalidArgument);
}

TEST_CASE("oracle_store") {
  const std::vector<std::string> labels{"a", "b"};
  const auto head = unit_head(2);

  const GcmlStore empty = oracle_store({}, head, grid4(0.5f), labels);
  CHECK(empty.total() == 0);

  // One sample with blobs at (0,0) and (3,3): key 1 + 2^15.
  const auto one = gen_spatial_classes(diagonal_spec(0.0f, 0.0f), 1, 1);
  const auto single = oracle_store(std::span(one.samples).subspan(0, 1), head, grid4(0.5f), labels);
  CHECK(single.total() == 1);
  CHECK(single.count(0, BitKey{1u + (1u << 15)}) == 1);

  // Random 200-sample dataset, both bit orders, several taus.
  const auto ds = gen_spatial_classes(three_class_spec(0.2f, 0.3f), 17, 67);
  const auto head3 = ClassifierHead(3, 1, {1.0f, -0.5f, 2.0f});
  for (float tau : {0.0f, 0.05f, 0.3f, 0.5f, 0.9f, 1.0f}) {
    for (auto order : {BitOrder::kLittle, BitOrder::kBig}) {
      auto cfg = grid4(tau);
      cfg.bit_order = order;
      GcmlStore trained(ds.class_labels, cfg);
      train_epoch(trained, ds.samples, head3);
      CHECK(trained == oracle_store(ds.samples, head3, cfg, ds.class_labels));
    }
  }
}

TEST_CASE("additive baseline") {
  // Equal sums and identical class weights: every score ties and the
  // baseline always answers class 0.
  const auto ds = gen_spatial_classes(diagonal_spec(0.1f, 0.0f), 4, 200);
  const double acc = additive_baseline(ds.samples, unit_head(2));
  CHECK(std::abs(acc - 0.5) <= 0.05);
  CHECK(additive_baseline(ds.samples, unit_head(2)) == acc);

  // Doubling class-B intensities restores an additive signal that a
  // threshold head (S_0 = T, S_1 = F) picks up.
  auto doubled = diagonal_spec(0.1f, 0.0f);
  for (auto& b : doubled.layouts[1][0]) b.intensity *= 2.0f;
  const auto ds2 = gen_spatial_classes(doubled, 4, 200);
  const ClassifierHead threshold_head(2, 1, {0.0f, 1.0f}, std::vector<float>{3.0f, 0.0f});
  CHECK(additive_baseline(ds2.samples, threshold_head) >= 0.99);
}

TEST_CASE("export_dataset writes GCT1 files and a manifest") {
  test::TempDir dir("synth_export");
  const auto ds = gen_spatial_classes(diagonal_spec(0.1f, 0.2f), 5, 3);
  const auto manifest = export_dataset(ds, dir.path());
  const auto loaded = read_manifest(dir / "manifest.json");
  CHECK(loaded.class_labels == ds.class_labels);
  REQUIRE(loaded.samples.size() == 6);
  const auto samples = load_samples(loaded);
  for (std::size_t i = 0; i < 6; ++i) CHECK(samples[i] == ds.samples[i]);
}
