#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "gcml/attention.hpp"
#include "gcml/cam.hpp"
#include "gcml/eval.hpp"
#include "gcml/store.hpp"
#include "gcml/synth.hpp"
#include "gcml/tensorio.hpp"

namespace gcml::cli {

namespace {

namespace fs = std::filesystem;

struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
};

Grid parse_grid(const std::string& text) {
  const auto x = text.find_first_of("xX");
  require(x != std::string::npos, ErrorCode::kInvalidArgument,
          "grid must look like HxW, got '" + text + "'");
  try {
    std::size_t used_h = 0, used_w = 0;
    const auto h = std::stoul(text.substr(0, x), &used_h);
    const auto w = std::stoul(text.substr(x + 1), &used_w);
    require(used_h == x && used_w == text.size() - x - 1 && h >= 1 && w >= 1,
            ErrorCode::kInvalidArgument, "grid must look like HxW, got '" + text + "'");
    return {h, w};
  } catch (const std::logic_error&) {
    fail(ErrorCode::kInvalidArgument, "grid must look like HxW, got '" + text + "'");
  }
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::ofstream open_out(const fs::path& path) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path.string());
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string dataset;
  std::string head;
  std::string store;
  std::string init_store;
  float tau = 0.5f;
  std::string grid = "4x4";
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  bool augment = false;
  std::string bit_order = "little";
  bool finalize = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto dataset = read_manifest(a.dataset);
  const auto head = load_head(a.head);
  const auto grid = parse_grid(a.grid);

  GcmlConfig cfg;
  cfg.tau = a.tau;
  cfg.grid_h = grid.h;
  cfg.grid_w = grid.w;
  cfg.bit_order = parse_bit_order(a.bit_order);
  cfg.validate();
  require(a.epochs >= 1, ErrorCode::kInvalidArgument, "--epochs must be >= 1");

  GcmlStore store(dataset.class_labels, cfg, head.pooling);
  if (!a.init_store.empty()) {
    // Further training: continue counting into an existing store.
    auto base = load_store(a.init_store);
    base.set_grid(cfg.grid_h, cfg.grid_w);
    require(base.compatible_with(store), ErrorCode::kConfigMismatch,
            "--init-store was built with a different tau, grid, bit order, pooling or classes");
    require(!base.normalized(), ErrorCode::kFrozen,
            "--init-store is finalized and cannot be trained further");
    store = std::move(base);
  }

  const auto samples = load_samples(dataset);
  for (std::size_t e = 0; e < a.epochs; ++e) {
    EpochOptions opts;
    if (a.augment) opts.augment_seed = a.seed + e;
    train_epoch(store, samples, head, opts);
  }
  if (a.finalize) store.set_normalized(true);
  save_store(store, fs::path(a.store));

  out << "class,row_total,distinct_keys\n";
  for (std::size_t c = 0; c < store.num_classes(); ++c) {
    out << store.classes()[c] << ',' << store.row_total(c) << ',' << store.row(c).size() << '\n';
  }
  out << "total," << store.total() << '\n';
  return 0;
}

// ---- predict ---------------------------------------------------------------

struct PredictArgs {
  std::string dataset;
  std::string head;
  std::string store;
  std::string out;
  std::string grid;
  std::string fallback = "cnn";
  double alpha = 0.0;
};

void check_csv_safe(const std::vector<std::string>& labels) {
  for (const auto& l : labels) {
    require(l.find_first_of(",\n\r\"") == std::string::npos && !l.empty(),
            ErrorCode::kInvalidArgument,
            "class label '" + l + "' cannot be written to CSV (empty or contains , \" or newline)");
  }
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const auto dataset = read_manifest(a.dataset);
  const auto head = load_head(a.head);
  auto store = load_store(fs::path(a.store));
  if (!a.grid.empty()) {
    const auto grid = parse_grid(a.grid);
    store.set_grid(grid.h, grid.w);
  }
  require(dataset.class_labels == store.classes(), ErrorCode::kConfigMismatch,
          "dataset classes differ from the store's classes");
  check_csv_safe(store.classes());

  PredictOptions opts;
  opts.fallback = parse_fallback(a.fallback);
  opts.alpha = a.alpha;

  const fs::path out_path = a.out;
  auto csv = open_out(out_path);
  csv << std::setprecision(9);
  csv << "sample,path,true_label,gcml_class,cnn_class,fallback";
  for (const auto& l : store.classes()) csv << ",likelihood:" << l;
  for (const auto& l : store.classes()) csv << ",key:" << l;
  for (const auto& l : store.classes()) csv << ",score:" << l;
  csv << '\n';

  std::size_t agree = 0;
  std::size_t fallbacks = 0;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    const auto features = FeatureMapStack::from_tensor(load_tensor(s.path));
    const auto p = predict(features, head, store, opts);
    csv << i << ',' << s.path.filename().generic_string() << ',' << s.label << ','
        << p.class_index << ',' << p.cnn_class << ',' << (p.fallback_used ? 1 : 0);
    for (double v : p.likelihoods) csv << ',' << v;
    for (const auto& k : p.keys) csv << ',' << k.value;
    for (double v : p.scores) csv << ',' << v;
    csv << '\n';
    if (p.class_index == s.label) ++agree;
    if (p.fallback_used) ++fallbacks;
  }
  finish(csv, out_path);
  out << "samples=" << dataset.samples.size() << " gcml_correct=" << agree
      << " fallbacks=" << fallbacks << '\n';
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string predictions;
  std::string path = "gcml";
  std::string out_dir;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::size_t parse_index(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    require(used == text.size(), ErrorCode::kCorrupt, "bad " + what + " '" + text + "'");
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    fail(ErrorCode::kCorrupt, "bad " + what + " '" + text + "'");
  }
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require(a.path == "gcml" || a.path == "cnn", ErrorCode::kInvalidArgument,
          "--path must be gcml or cnn");
  std::ifstream in(a.predictions);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + a.predictions);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kCorrupt,
          "predictions file is empty");
  const auto header = split_csv(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    require(it != header.end(), ErrorCode::kCorrupt, "predictions file lacks column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto truth_col = column("true_label");
  const auto pred_col = column(a.path == "gcml" ? "gcml_class" : "cnn_class");
  std::vector<std::string> labels;
  const std::string prefix = "likelihood:";
  for (const auto& h : header) {
    if (h.rfind(prefix, 0) == 0) labels.push_back(h.substr(prefix.size()));
  }
  require(!labels.empty(), ErrorCode::kCorrupt, "predictions file names no classes");

  std::vector<std::size_t> preds;
  std::vector<std::size_t> truth;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    require(cells.size() == header.size(), ErrorCode::kCorrupt,
            "predictions row has " + std::to_string(cells.size()) + " cells, expected " +
                std::to_string(header.size()));
    truth.push_back(parse_index(cells[truth_col], "true label"));
    preds.push_back(parse_index(cells[pred_col], "predicted label"));
  }
  const auto m = eval::confusion(preds, truth, labels.size());
  const auto report = eval::metrics(m);

  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  auto metrics_csv = open_out(dir / "metrics.csv");
  eval::write_metrics_csv(report, labels, metrics_csv);
  finish(metrics_csv, dir / "metrics.csv");
  auto cm_txt = open_out(dir / "confusion.txt");
  eval::write_confusion_text(m, labels, cm_txt);
  finish(cm_txt, dir / "confusion.txt");

  eval::write_metrics_csv(report, labels, out);
  return 0;
}

// ---- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string dataset;
  std::string eval_dataset;
  std::string head;
  std::vector<float> taus;
  std::string grid = "4x4";
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  bool augment = false;
  std::string bit_order = "little";
  std::string fallback = "cnn";
  double alpha = 0.0;
  std::string out;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const auto train_manifest = read_manifest(a.dataset);
  const auto head = load_head(a.head);
  const auto train = load_samples(train_manifest);
  std::vector<TrainingSample> held_out;
  if (!a.eval_dataset.empty()) {
    const auto m = read_manifest(a.eval_dataset);
    require(m.class_labels == train_manifest.class_labels, ErrorCode::kConfigMismatch,
            "evaluation dataset classes differ from training dataset classes");
    held_out = load_samples(m);
  }
  const auto& test = a.eval_dataset.empty() ? train : held_out;

  const auto grid = parse_grid(a.grid);
  eval::SweepOptions opts;
  opts.epochs = a.epochs;
  if (a.augment) opts.augment_seed = a.seed;
  opts.grid_h = grid.h;
  opts.grid_w = grid.w;
  opts.bit_order = parse_bit_order(a.bit_order);
  opts.predict.fallback = parse_fallback(a.fallback);
  opts.predict.alpha = a.alpha;

  const auto result =
      eval::tau_sweep(train, test, head, a.taus, opts, train_manifest.class_labels);
  if (!a.out.empty()) {
    const fs::path p = a.out;
    auto f = open_out(p);
    eval::write_sweep_csv(result, f);
    finish(f, p);
  }
  eval::write_sweep_csv(result, out);
  return 0;
}

// ---- merge -----------------------------------------------------------------

struct MergeArgs {
  std::vector<std::string> inputs;
  std::string out;
};

int cmd_merge(const MergeArgs& a, std::ostream& out) {
  require(!a.inputs.empty(), ErrorCode::kInvalidArgument, "merge needs at least one input");
  auto merged = load_store(fs::path(a.inputs.front()));
  for (std::size_t i = 1; i < a.inputs.size(); ++i) {
    merged = merge(merged, load_store(fs::path(a.inputs[i])));
  }
  const fs::path p = a.out;
  ensure_parent(p);
  save_store(merged, p);
  out << "merged " << a.inputs.size() << " stores, total=" << merged.total() << '\n';
  return 0;
}

// ---- heatmap ---------------------------------------------------------------

struct HeatmapArgs {
  std::string tensor;
  std::string head;
  std::size_t class_index = 0;
  std::string size = "224x224";
  std::string grid;
  bool normalize = false;
  std::string out;
};

int cmd_heatmap(const HeatmapArgs& a, std::ostream& out) {
  auto features = FeatureMapStack::from_tensor(load_tensor(a.tensor));
  const auto head = load_head(a.head);
  if (!a.grid.empty()) {
    const auto grid = parse_grid(a.grid);
    features = downsample_avg(features, grid.h, grid.w);
  }
  auto cam = compute_cam(features, head, a.class_index);
  if (a.normalize) cam = minmax_normalize(cam);
  const auto size = parse_grid(a.size);
  const auto heat = upsample_bilinear(cam, size.h, size.w);
  const fs::path p = a.out;
  ensure_parent(p);
  save_tensor(heat, p);
  out << "heatmap " << size.h << 'x' << size.w << " for class " << a.class_index << " from "
      << cam.height << 'x' << cam.width << " map\n";
  return 0;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string preset = "paired";
  std::size_t n_per_class = 100;
  std::uint64_t seed = 0;
  float noise = 0.05f;
  float jitter = 0.0f;
  std::string out_dir;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  synth::SpatialClassSpec spec;
  if (a.preset == "diagonal") {
    spec = synth::diagonal_spec(a.noise, a.jitter);
  } else if (a.preset == "paired") {
    spec = synth::paired_corner_spec(a.noise, a.jitter);
  } else if (a.preset == "three") {
    spec = synth::three_class_spec(a.noise, a.jitter);
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown preset '" + a.preset + "'");
  }
  const auto ds = synth::gen_spatial_classes(spec, a.seed, a.n_per_class);
  const fs::path dir = a.out_dir;
  synth::export_dataset(ds, dir);
  save_head(synth::unit_head(ds.class_labels.size()), dir / "head.json");
  out << "wrote " << ds.samples.size() << " samples to " << (dir / "manifest.json").string()
      << " and head " << (dir / "head.json").string() << '\n';
  return 0;
}

// ---- ztest -----------------------------------------------------------------

struct ZArgs {
  std::uint64_t c1 = 0;
  std::uint64_t c2 = 0;
  std::uint64_t n = 0;
};

int cmd_ztest(const ZArgs& a, std::ostream& out) {
  const auto r = eval::two_proportion_z(a.c1, a.c2, a.n);
  out << std::fixed << std::setprecision(6) << "p1=" << r.p1 << " p2=" << r.p2
      << " p_hat=" << r.p_hat << " n=" << r.n << " z=" << r.z << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gcml: class-activation-map attention datastore"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Build a GCS1 store from a dataset (one count per sample per epoch)");
  t->add_option("--dataset", train.dataset, "Dataset manifest (JSON)")->required();
  t->add_option("--head", train.head, "Head manifest (JSON)")->required();
  t->add_option("--store", train.store, "Output store file")->required();
  t->add_option("--init-store", train.init_store, "Existing store to train further");
  t->add_option("--tau", train.tau, "Activation threshold in [0,1]")->capture_default_str();
  t->add_option("--grid", train.grid, "Attention grid HxW")->capture_default_str();
  t->add_option("--epochs", train.epochs, "Passes over the dataset")->capture_default_str();
  t->add_option("--seed", train.seed, "Augmentation seed (epoch e uses seed+e)")->capture_default_str();
  t->add_flag("--augment", train.augment, "Jitter feature maps by up to one cell per epoch");
  t->add_option("--bit-order", train.bit_order, "little|big")->capture_default_str();
  t->add_flag("--normalize", train.finalize, "Mark the store finalized (no further training)");

  PredictArgs pred;
  auto* p = app.add_subcommand("predict", "Classify a dataset with both the GCML and CNN paths");
  p->add_option("--dataset", pred.dataset, "Dataset manifest (JSON)")->required();
  p->add_option("--head", pred.head, "Head manifest (JSON)")->required();
  p->add_option("--store", pred.store, "Store file")->required();
  p->add_option("--out", pred.out, "Output predictions CSV")->required();
  p->add_option("--grid", pred.grid, "Grid HxW (defaults to the store's square grid)");
  p->add_option("--fallback", pred.fallback, "cnn|first")->capture_default_str();
  p->add_option("--alpha", pred.alpha, "Additive smoothing")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Metrics and confusion matrix from a predictions CSV");
  e->add_option("--predictions", ev.predictions, "Predictions CSV from `predict`")->required();
  e->add_option("--path", ev.path, "gcml|cnn")->capture_default_str();
  e->add_option("--out-dir", ev.out_dir, "Directory for metrics.csv and confusion.txt")->required();

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Train and evaluate one store per tau");
  s->add_option("--dataset", sw.dataset, "Training dataset manifest")->required();
  s->add_option("--eval-dataset", sw.eval_dataset, "Evaluation manifest (default: training set)");
  s->add_option("--head", sw.head, "Head manifest")->required();
  s->add_option("--taus", sw.taus, "Comma-separated tau values")->required()->delimiter(',');
  s->add_option("--grid", sw.grid, "Attention grid HxW")->capture_default_str();
  s->add_option("--epochs", sw.epochs, "Passes over the dataset")->capture_default_str();
  s->add_option("--seed", sw.seed, "Augmentation seed")->capture_default_str();
  s->add_flag("--augment", sw.augment, "Jitter feature maps per epoch");
  s->add_option("--bit-order", sw.bit_order, "little|big")->capture_default_str();
  s->add_option("--fallback", sw.fallback, "cnn|first")->capture_default_str();
  s->add_option("--alpha", sw.alpha, "Additive smoothing")->capture_default_str();
  s->add_option("--out", sw.out, "Output CSV");

  MergeArgs mg;
  auto* m = app.add_subcommand("merge", "Add the counts of several compatible stores");
  m->add_option("--inputs", mg.inputs, "Store files")->required()->expected(1, -1);
  m->add_option("--out", mg.out, "Output store")->required();

  HeatmapArgs hm;
  auto* h = app.add_subcommand("heatmap", "Upsample one class activation map to a heatmap tensor");
  h->add_option("--tensor", hm.tensor, "Feature stack (GCT1)")->required();
  h->add_option("--head", hm.head, "Head manifest")->required();
  h->add_option("--class", hm.class_index, "Class index")->required();
  h->add_option("--size", hm.size, "Output HxW")->capture_default_str();
  h->add_option("--grid", hm.grid, "Average-pool the stack to HxW first");
  h->add_flag("--normalize", hm.normalize, "Min-max normalize the map before upsampling");
  h->add_option("--out", hm.out, "Output GCT1 tensor")->required();

  SynthArgs sy;
  auto* g = app.add_subcommand("synth", "Write a synthetic spatial dataset and unit head");
  g->add_option("--preset", sy.preset, "diagonal|paired|three")->capture_default_str();
  g->add_option("--n-per-class", sy.n_per_class, "Samples per class")->capture_default_str();
  g->add_option("--seed", sy.seed, "Generator seed")->capture_default_str();
  g->add_option("--noise", sy.noise, "Blob intensity noise sigma")->capture_default_str();
  g->add_option("--jitter", sy.jitter, "Blob move probability")->capture_default_str();
  g->add_option("--out-dir", sy.out_dir, "Output directory")->required();

  ZArgs za;
  auto* z = app.add_subcommand("ztest", "Pooled two-proportion z statistic");
  z->add_option("--c1", za.c1, "Correct count, classifier 1")->required();
  z->add_option("--c2", za.c2, "Correct count, classifier 2")->required();
  z->add_option("--n", za.n, "Samples per classifier")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err);
  }

  try {
    if (t->parsed()) return cmd_train(train, out);
    if (p->parsed()) return cmd_predict(pred, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (s->parsed()) return cmd_sweep(sw, out);
    if (m->parsed()) return cmd_merge(mg, out);
    if (h->parsed()) return cmd_heatmap(hm, out);
    if (g->parsed()) return cmd_synth(sy, out);
    if (z->parsed()) return cmd_ztest(za, out);
  } catch (const Error& ex) {
    err << "gcml: " << to_string(ex.code()) << ": " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    err << "gcml: " << ex.what() << '\n';
    return 2;
  }
  return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("gcml");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace gcml::cli
