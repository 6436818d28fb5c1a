// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gcml/attention.hpp"
#include "gcml/cam.hpp"
#include "gcml/error.hpp"
#include "gcml/eval.hpp"
#include "gcml/store.hpp"
#include "gcml/synth.hpp"
#include "gcml/tensorio.hpp"

using namespace gcml;

namespace {

struct Outcome {
  bool ok;
  std::string detail;
};

int failures = 0;

void criterion(const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome r{false, ""};
  try {
    r = body();
  } catch (const std::exception& e) {
    r = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = limit_s <= 0.0 || secs < limit_s;
  const bool pass = r.ok && in_time;
  if (!pass) ++failures;
  std::printf("%s %-28s %s time=%.3fs", pass ? "PASS" : "FAIL", name, r.detail.c_str(), secs);
  if (limit_s > 0.0) std::printf(" limit=%.0fs", limit_s);
  std::printf("\n");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::vector<float> uniform(std::mt19937_64& rng, std::size_t n, float lo, float hi) {
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

ClassifierHead random_head(std::mt19937_64& rng, std::size_t classes, std::size_t k) {
  return ClassifierHead(classes, k, uniform(rng, classes * k, -1.0f, 1.0f));
}

std::vector<std::string> labels_for(std::size_t classes) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < classes; ++c) out.push_back("class" + std::to_string(c));
  return out;
}

Outcome z_test() {
  const auto r = eval::two_proportion_z(245, 252, 268);
  return {r.z >= -1.17 && r.z <= -1.15, fmt("z=%.6f range=[-1.17,-1.15]", r.z)};
}

Outcome wald() {
  const auto ci = eval::wald_ci(0.948, 580);
  const double hw = ci.half_width();
  return {std::abs(hw - 0.018) <= 0.001, fmt("half_width=%.6f target=0.018+-0.001", hw)};
}

Outcome bijection() {
  constexpr std::size_t kBits = 16;
  for (const auto order : {BitOrder::kLittle, BitOrder::kBig}) {
    std::vector<std::uint8_t> seen(std::size_t{1} << kBits, 0);
    std::vector<std::uint8_t> bits(kBits);
    for (std::uint32_t p = 0; p < (1u << kBits); ++p) {
      for (std::size_t i = 0; i < kBits; ++i) bits[i] = (p >> i) & 1u;
      const auto key = key_from_bits(bits, order).value;
      if (key >= seen.size() || seen[key]++) {
        return {false, "order=" + std::string(to_string(order)) + " collision or overflow"};
      }
    }
    for (auto s : seen) {
      if (s != 1) return {false, "order=" + std::string(to_string(order)) + " missing key"};
    }
  }
  return {true, "L=16 keys=65536 orders=little,big"};
}

Outcome oracle() {
  // 67 per class gives 201; the first 200 are kept.
  const auto ds = synth::gen_spatial_classes(synth::three_class_spec(), 2024, 67);
  std::vector<TrainingSample> samples(ds.samples.begin(), ds.samples.begin() + 200);
  std::mt19937_64 rng(7);
  const auto head = random_head(rng, 3, 1);
  std::size_t compared = 0;
  for (const float tau : {0.1f, 0.5f, 0.9f}) {
    for (const auto order : {BitOrder::kLittle, BitOrder::kBig}) {
      GcmlConfig cfg;
      cfg.tau = tau;
      cfg.bit_order = order;
      GcmlStore store(ds.class_labels, cfg);
      train_epoch(store, samples, head);
      const auto ref = synth::oracle_store(samples, head, cfg, ds.class_labels);
      if (!(store == ref) || store.total() != 200) {
        return {false, fmt("mismatch at tau=%.2f", tau)};
      }
      for (std::size_t c = 0; c < 3; ++c) {
        for (const auto& [key, n] : ref.row(c)) {
          if (store.count(c, BitKey{key}) != n) return {false, "count mismatch"};
          ++compared;
        }
      }
    }
  }
  return {true, fmt("samples=200 classes=3 grid=4x4 configs=6 entries=%.0f", double(compared))};
}

Outcome hypothesis() {
  const auto spec = synth::paired_corner_spec(0.1f, 0.1f);
  const auto train = synth::gen_spatial_classes(spec, 101, 500);
  const auto valid = synth::gen_spatial_classes(spec, 202, 500);
  const auto test = synth::gen_spatial_classes(spec, 303, 500);
  const auto head = synth::unit_head(2);

  const std::vector<float> taus{0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f, 0.9f, 0.999f};
  const auto sweep =
      eval::tau_sweep(train.samples, valid.samples, head, taus, {}, train.class_labels);

  GcmlConfig cfg;
  cfg.tau = sweep.best_tau;
  GcmlStore store(train.class_labels, cfg);
  train_epoch(store, train.samples, head);
  const double gcml = synth::gcml_accuracy(test.samples, head, store);
  const double base = synth::additive_baseline(test.samples, head);
  return {base >= 0.45 && base <= 0.55 && gcml >= 0.95,
          fmt("baseline=%.4f gcml=%.4f", base, gcml) + fmt(" tau=%.3f", sweep.best_tau)};
}

Outcome partition() {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = 2 + rng() % 3;
    const std::size_t k = 1 + rng() % 4;
    const std::size_t n = 20 + rng() % 80;
    const auto head = random_head(rng, classes, k);
    std::vector<TrainingSample> samples;
    for (std::size_t i = 0; i < n; ++i) {
      samples.push_back({FeatureMapStack(k, 4, 4, uniform(rng, k * 16, 0.0f, 1.0f)),
                         static_cast<std::size_t>(rng() % classes)});
    }
    GcmlConfig cfg;
    cfg.tau = std::uniform_real_distribution<float>(0.05f, 0.95f)(rng);
    cfg.bit_order = rng() % 2 ? BitOrder::kBig : BitOrder::kLittle;
    EpochOptions opts;
    if (rng() % 2) opts.augment_seed = rng();

    GcmlStore whole(labels_for(classes), cfg);
    train_epoch(whole, samples, head, opts);

    std::vector<std::size_t> cuts{0, rng() % (n + 1), rng() % (n + 1), rng() % (n + 1), n};
    std::sort(cuts.begin(), cuts.end());
    GcmlStore merged(labels_for(classes), cfg);
    for (std::size_t s = 0; s < 4; ++s) {
      GcmlStore shard(labels_for(classes), cfg);
      EpochOptions shard_opts = opts;
      shard_opts.first_index = cuts[s];
      train_epoch(shard, std::span(samples).subspan(cuts[s], cuts[s + 1] - cuts[s]), head,
                  shard_opts);
      merged = merge(merged, shard);
    }
    if (!(merged == whole)) return {false, fmt("trial %.0f differs", trial)};
  }
  return {true, "trials=100 shards=4"};
}

Outcome monotonicity() {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t h = 1 + rng() % 8, w = 1 + rng() % 8;
    const auto cam = minmax_normalize(Cam{h, w, uniform(rng, h * w, -3.0f, 3.0f), 0});
    float t1 = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    float t2 = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    if (t1 > t2) std::swap(t1, t2);
    if (t1 == t2) continue;
    const auto lo = threshold(cam, t1);
    const auto hi = threshold(cam, t2);
    for (std::size_t j = 0; j < lo.bits.size(); ++j) {
      if (hi.bits[j] && !lo.bits[j]) return {false, fmt("cam %.0f violates subset", i)};
    }
  }
  return {true, "cams=1000"};
}

Outcome linearity() {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t gh = 1 + rng() % 4, gw = 1 + rng() % 4;
    const std::size_t fy = 1 + rng() % 3, fx = 1 + rng() % 3;
    const std::size_t k = 1 + rng() % 4, classes = 1 + rng() % 3;
    const FeatureMapStack stack(k, gh * fy, gw * fx, uniform(rng, k * gh * fy * gw * fx, 0.0f, 1.0f));
    const auto head = random_head(rng, classes, k);
    const auto c = static_cast<std::size_t>(rng() % classes);
    const auto a = compute_cam(downsample_avg(stack, gh, gw), head, c);
    const auto b = downsample_avg(compute_cam(stack, head, c), gh, gw);
    for (std::size_t j = 0; j < a.values.size(); ++j) {
      worst = std::max(worst, static_cast<double>(std::abs(a.values[j] - b.values[j])));
    }
  }
  return {worst <= 1e-6, fmt("inputs=1000 max_abs_err=%.3g tol=1e-6", worst)};
}

GcmlStore random_store(std::mt19937_64& rng) {
  const std::size_t classes = 1 + rng() % 5;
  GcmlConfig cfg;
  const std::size_t gh = 1 + rng() % 8;
  cfg.grid_h = gh;
  cfg.grid_w = 1 + rng() % (64 / gh);
  cfg.tau = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
  cfg.bit_order = rng() % 2 ? BitOrder::kBig : BitOrder::kLittle;
  GcmlStore store(labels_for(classes), cfg, rng() % 2 ? PoolingMode::kMean : PoolingMode::kSum);
  const auto bits = cfg.key_bits();
  const std::uint64_t mask = bits == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bits) - 1;
  const std::size_t entries = rng() % 60;
  for (std::size_t i = 0; i < entries; ++i) {
    store.increment(rng() % classes, BitKey{rng() & mask}, 1 + rng() % 1000);
  }
  if (rng() % 2) store.set_normalized(true);
  return store;
}

template <typename Load>
bool rejects(const std::string& bytes, Load load) {
  std::istringstream in(bytes);
  try {
    load(in);
  } catch (const Error&) {
    return true;
  }
  return false;
}

Outcome serialization() {
  std::mt19937_64 rng(31337);
  std::size_t rejected = 0;
  // Stream variants leave trailing data to the caller, as the file loaders do.
  auto load_s = [](std::istream& in) {
    auto s = load_store(in);
    require(in.peek() == std::char_traits<char>::eof(), ErrorCode::kCorrupt, "trailing bytes");
    return s;
  };
  auto load_t = [](std::istream& in) {
    auto t = read_tensor(in);
    require(in.peek() == std::char_traits<char>::eof(), ErrorCode::kCorrupt, "trailing bytes");
    return t;
  };
  for (int i = 0; i < 500; ++i) {
    const auto store = random_store(rng);
    std::ostringstream out;
    save_store(store, out);
    const auto bytes = out.str();
    std::istringstream in(bytes);
    const auto back = load_store(in);
    std::ostringstream again;
    save_store(back, again);
    if (!(back == store) || again.str() != bytes) return {false, fmt("store %.0f differs", i)};

    const std::size_t ndim = 1 + rng() % 4;
    TensorF32 t;
    std::size_t count = 1;
    for (std::size_t d = 0; d < ndim; ++d) {
      t.shape.push_back(static_cast<std::uint32_t>(1 + rng() % 6));
      count *= t.shape.back();
    }
    for (std::size_t j = 0; j < count; ++j) {
      t.data.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(rng())));
    }
    std::ostringstream tout;
    write_tensor(t, tout);
    const auto tbytes = tout.str();
    std::istringstream tin(tbytes);
    const auto tback = read_tensor(tin);
    if (tback.shape != t.shape ||
        std::memcmp(tback.data.data(), t.data.data(), count * sizeof(float)) != 0) {
      return {false, fmt("tensor %.0f differs", i)};
    }

    // Corruptions: truncation, wrong magic, trailing byte.
    const std::vector<std::string> bad_stores{bytes.substr(0, rng() % bytes.size()),
                                              "X" + bytes.substr(1), bytes + '\0'};
    for (const auto& b : bad_stores) {
      if (!rejects(b, load_s)) return {false, fmt("corrupt store %.0f accepted", i)};
      ++rejected;
    }
    const std::vector<std::string> bad_tensors{tbytes.substr(0, rng() % tbytes.size()),
                                               "X" + tbytes.substr(1), tbytes + '\0'};
    for (const auto& b : bad_tensors) {
      if (!rejects(b, load_t)) return {false, fmt("corrupt tensor %.0f accepted", i)};
      ++rejected;
    }
  }
  return {true, fmt("stores=500 tensors=500 corruptions_rejected=%.0f", double(rejected))};
}

Outcome further_training() {
  const auto spec = synth::paired_corner_spec(0.1f, 0.3f);
  const auto head = synth::unit_head(2);
  GcmlConfig cfg;
  cfg.tau = 0.5f;
  double before = 0.0, after = 0.0;
  constexpr int kSeeds = 20;
  for (int s = 0; s < kSeeds; ++s) {
    const auto base = static_cast<std::uint64_t>(1000 + 10 * s);
    const auto first = synth::gen_spatial_classes(spec, base, 3);
    const auto second = synth::gen_spatial_classes(spec, base + 1, 100);
    const auto held = synth::gen_spatial_classes(spec, base + 2, 200);
    GcmlStore small(first.class_labels, cfg);
    train_epoch(small, first.samples, head);
    GcmlStore extra(first.class_labels, cfg);
    train_epoch(extra, second.samples, head);
    const auto grown = merge(small, extra);
    before += synth::gcml_accuracy(held.samples, head, small);
    after += synth::gcml_accuracy(held.samples, head, grown);
  }
  before /= kSeeds;
  after /= kSeeds;
  return {after >= before, fmt("seeds=20 mean_before=%.4f mean_after=%.4f", before, after)};
}

}  // namespace

int main() {
  criterion("z_test_reproduction", 1.0, z_test);
  criterion("wald_ci_reproduction", 1.0, wald);
  criterion("key_bijectivity", 5.0, bijection);
  criterion("oracle_equivalence", 10.0, oracle);
  criterion("hypothesis_experiment", 60.0, hypothesis);
  criterion("merge_partition", 30.0, partition);
  criterion("threshold_monotonicity", 5.0, monotonicity);
  criterion("cam_pool_linearity", 5.0, linearity);
  criterion("serialization", 30.0, serialization);
  criterion("further_training", 0.0, further_training);
  std::printf("%s: %d failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
