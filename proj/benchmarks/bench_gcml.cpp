#include <benchmark/benchmark.h>

#include <sstream>

#include "gcml/attention.hpp"
#include "gcml/cam.hpp"
#include "gcml/store.hpp"
#include "gcml/synth.hpp"

using namespace gcml;

namespace {

const synth::SynthDataset& dataset() {
  static const auto ds =
      synth::gen_spatial_classes(synth::paired_corner_spec(0.1f, 0.1f), 1, 500);
  return ds;
}

GcmlStore trained_store() {
  GcmlStore store(dataset().class_labels, GcmlConfig{});
  train_epoch(store, dataset().samples, synth::unit_head(2));
  return store;
}

}  // namespace

static void BM_AttentionKey(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  GcmlConfig cfg;
  cfg.grid_h = side;
  cfg.grid_w = side;
  Cam cam{side, side, std::vector<float>(side * side), 0};
  for (std::size_t i = 0; i < cam.values.size(); ++i) cam.values[i] = float(i % 7) / 7.0f;
  for (auto _ : state) benchmark::DoNotOptimize(attention_key(cam, cfg));
}
BENCHMARK(BM_AttentionKey)->Arg(4)->Arg(8);

static void BM_TrainEpoch(benchmark::State& state) {
  const auto head = synth::unit_head(2);
  for (auto _ : state) {
    GcmlStore store(dataset().class_labels, GcmlConfig{});
    train_epoch(store, dataset().samples, head);
    benchmark::DoNotOptimize(store.total());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(dataset().samples.size()));
}
BENCHMARK(BM_TrainEpoch);

static void BM_TrainEpochParallel(benchmark::State& state) {
  const auto head = synth::unit_head(2);
  for (auto _ : state) {
    GcmlStore store(dataset().class_labels, GcmlConfig{});
    train_epoch_parallel(store, dataset().samples, head, {},
                         static_cast<std::size_t>(state.range(0)));
    benchmark::DoNotOptimize(store.total());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(dataset().samples.size()));
}
BENCHMARK(BM_TrainEpochParallel)->Arg(2)->Arg(4)->UseRealTime();

static void BM_Predict(benchmark::State& state) {
  const auto store = trained_store();
  const auto head = synth::unit_head(2);
  const auto& samples = dataset().samples;
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(predict(samples[i].features, head, store));
    i = (i + 1) % samples.size();
  }
}
BENCHMARK(BM_Predict);

static void BM_StoreRoundTrip(benchmark::State& state) {
  const auto store = trained_store();
  for (auto _ : state) {
    std::stringstream buf;
    save_store(store, buf);
    benchmark::DoNotOptimize(load_store(buf));
  }
}
BENCHMARK(BM_StoreRoundTrip);

BENCHMARK_MAIN();
