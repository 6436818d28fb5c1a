#include "gcml/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace gcml::eval {

namespace {

constexpr double kZ95 = 1.96;

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes), counts_(classes * classes, 0) {
  require(classes >= 1, ErrorCode::kInvalidArgument, "confusion matrix needs >= 1 class");
}

void ConfusionMatrix::add(std::size_t predicted, std::size_t truth, std::uint64_t n) {
  require(predicted < classes_ && truth < classes_, ErrorCode::kOutOfRange,
          "label out of range for confusion matrix");
  counts_[predicted * classes_ + truth] += n;
}

std::uint64_t ConfusionMatrix::at(std::size_t predicted, std::size_t truth) const {
  require(predicted < classes_ && truth < classes_, ErrorCode::kOutOfRange,
          "label out of range for confusion matrix");
  return counts_[predicted * classes_ + truth];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t c = 0; c < classes_; ++c) t += counts_[c * classes_ + c];
  return t;
}

std::uint64_t ConfusionMatrix::support(std::size_t truth) const {
  std::uint64_t t = 0;
  for (std::size_t p = 0; p < classes_; ++p) t += at(p, truth);
  return t;
}

std::uint64_t ConfusionMatrix::predicted_count(std::size_t predicted) const {
  std::uint64_t t = 0;
  for (std::size_t c = 0; c < classes_; ++c) t += at(predicted, c);
  return t;
}

ConfusionMatrix confusion(std::span<const std::size_t> predicted,
                          std::span<const std::size_t> truth, std::size_t classes) {
  require(predicted.size() == truth.size(), ErrorCode::kDimensionMismatch,
          "prediction and truth lists differ in length (" + std::to_string(predicted.size()) +
              " vs " + std::to_string(truth.size()) + ")");
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < predicted.size(); ++i) m.add(predicted[i], truth[i]);
  return m;
}

Interval wald_ci(double p, std::uint64_t n) {
  require(n >= 1, ErrorCode::kInvalidArgument, "confidence interval needs n >= 1");
  require(p >= 0.0 && p <= 1.0, ErrorCode::kInvalidArgument, "proportion outside [0, 1]");
  const double half = kZ95 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  return {std::max(0.0, p - half), std::min(1.0, p + half)};
}

Estimate estimate(double point, std::uint64_t n) {
  if (n == 0) return {point, point, point, 0};
  const auto ci = wald_ci(point, n);
  return {point, ci.low, ci.high, n};
}

MetricReport metrics(const ConfusionMatrix& m) {
  const std::uint64_t n = m.total();
  require(n > 0, ErrorCode::kInvalidArgument, "cannot compute metrics of an empty matrix");
  const std::size_t classes = m.classes();
  const double total = static_cast<double>(n);

  MetricReport r;
  r.n = n;
  r.accuracy = estimate(static_cast<double>(m.trace()) / total, n);

  double recall_sum = 0.0;
  double f1_sum = 0.0;
  double f1_weighted = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double tp = static_cast<double>(m.at(c, c));
    const double support = static_cast<double>(m.support(c));
    const double precision = safe_ratio(tp, static_cast<double>(m.predicted_count(c)));
    const double recall = safe_ratio(tp, support);
    const double f1 = safe_ratio(2.0 * precision * recall, precision + recall);
    r.per_class_accuracy.push_back(estimate(recall, m.support(c)));
    r.per_class_f1.push_back(f1);
    recall_sum += recall;
    f1_sum += f1;
    f1_weighted += f1 * support / total;
  }
  r.sensitivity = estimate(recall_sum / static_cast<double>(classes), n);
  r.macro_f1 = estimate(f1_sum / static_cast<double>(classes), n);
  r.weighted_f1 = estimate(f1_weighted, n);
  return r;
}

ZTestResult two_proportion_z(std::uint64_t correct1, std::uint64_t correct2, std::uint64_t n) {
  require(n >= 1, ErrorCode::kInvalidArgument, "z test needs n >= 1");
  require(correct1 <= n && correct2 <= n, ErrorCode::kInvalidArgument,
          "correct counts cannot exceed the group size");
  ZTestResult r;
  r.n = n;
  const double nn = static_cast<double>(n);
  r.p1 = static_cast<double>(correct1) / nn;
  r.p2 = static_cast<double>(correct2) / nn;
  r.p_hat = static_cast<double>(correct1 + correct2) / (2.0 * nn);
  if (correct1 == correct2) {
    r.z = 0.0;
    return r;
  }
  const double variance = 2.0 * r.p_hat * (1.0 - r.p_hat) / nn;
  require(variance > 0.0, ErrorCode::kDegenerate,
          "pooled proportion is 0 or 1 with unequal groups; z is undefined");
  r.z = (r.p1 - r.p2) / std::sqrt(variance);
  return r;
}

void write_metrics_csv(const MetricReport& report, std::span<const std::string> class_labels,
                       std::ostream& out) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::fixed << std::setprecision(6);
  auto row = [&](const std::string& name, const Estimate& e) {
    out << name << ',' << e.point << ',' << e.ci_low << ',' << e.ci_high << ',' << e.n << '\n';
  };
  out << "name,point,ci_low,ci_high,n\n";
  row("accuracy", report.accuracy);
  row("macro_f1", report.macro_f1);
  row("weighted_f1", report.weighted_f1);
  row("sensitivity", report.sensitivity);
  for (std::size_t c = 0; c < report.per_class_accuracy.size(); ++c) {
    const std::string label = c < class_labels.size() ? class_labels[c] : std::to_string(c);
    row("class_accuracy:" + label, report.per_class_accuracy[c]);
  }
  out.flags(flags);
  out.precision(precision);
}

void write_confusion_text(const ConfusionMatrix& m, std::span<const std::string> class_labels,
                          std::ostream& out) {
  auto label = [&](std::size_t c) {
    return c < class_labels.size() ? class_labels[c] : std::to_string(c);
  };
  std::size_t width = std::string("predicted \\ true").size();
  for (std::size_t c = 0; c < m.classes(); ++c) width = std::max(width, label(c).size());
  for (std::size_t p = 0; p < m.classes(); ++p) {
    for (std::size_t t = 0; t < m.classes(); ++t) {
      width = std::max(width, std::to_string(m.at(p, t)).size());
    }
  }
  width += 2;

  out << "rows: predicted label, columns: true label\n";
  out << std::left << std::setw(static_cast<int>(width)) << "predicted \\ true";
  for (std::size_t t = 0; t < m.classes(); ++t) {
    out << std::right << std::setw(static_cast<int>(width)) << label(t);
  }
  out << '\n';
  for (std::size_t p = 0; p < m.classes(); ++p) {
    out << std::left << std::setw(static_cast<int>(width)) << label(p);
    for (std::size_t t = 0; t < m.classes(); ++t) {
      out << std::right << std::setw(static_cast<int>(width)) << m.at(p, t);
    }
    out << '\n';
  }
  out << std::left;
}

SweepResult tau_sweep(std::span<const TrainingSample> train, std::span<const TrainingSample> test,
                      const ClassifierHead& head, std::span<const float> taus,
                      const SweepOptions& options, std::span<const std::string> class_labels) {
  require(!taus.empty(), ErrorCode::kInvalidArgument, "tau sweep needs at least one tau");
  require(!test.empty(), ErrorCode::kInvalidArgument, "tau sweep needs evaluation samples");
  require(options.epochs >= 1, ErrorCode::kInvalidArgument, "tau sweep needs >= 1 epoch");
  for (float tau : taus) {
    require(tau >= 0.0f && tau <= 1.0f, ErrorCode::kInvalidArgument,
            "tau values must lie in [0, 1]");
  }
  std::vector<std::string> labels(class_labels.begin(), class_labels.end());
  if (labels.empty()) {
    for (std::size_t c = 0; c < head.classes; ++c) labels.push_back(std::to_string(c));
  }
  require(labels.size() == head.classes, ErrorCode::kConfigMismatch,
          "class label count does not match head");

  GcmlConfig base;
  base.grid_h = options.grid_h;
  base.grid_w = options.grid_w;
  base.bit_order = options.bit_order;
  base.validate();

  // Training maps: one per (epoch, sample), jittered when augmenting.
  std::vector<Cam> train_cams;
  std::vector<std::size_t> train_labels;
  train_cams.reserve(train.size() * options.epochs);
  for (std::size_t e = 0; e < options.epochs; ++e) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto& s = train[i];
      FeatureMapStack f = s.features;
      if (options.augment_seed) {
        f = jitter_features(f, derive_sample_seed(*options.augment_seed + e, i));
      }
      train_cams.push_back(compute_cam(fit_to_grid(f, base), head, s.label));
      train_labels.push_back(s.label);
    }
  }

  std::vector<std::vector<Cam>> test_cams;
  std::vector<std::vector<double>> test_scores;
  for (const auto& s : test) {
    test_cams.push_back(compute_cams(fit_to_grid(s.features, base), head));
    test_scores.push_back(class_scores(s.features, head));
  }

  SweepResult result;
  bool first = true;
  for (float tau : taus) {
    GcmlConfig cfg = base;
    cfg.tau = tau;
    GcmlStore store(labels, cfg, head.pooling);
    for (std::size_t i = 0; i < train_cams.size(); ++i) {
      store.increment(train_labels[i], attention_key(train_cams[i], cfg));
    }
    std::uint64_t correct = 0;
    std::uint64_t fallbacks = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto p = predict_from_cams(test_cams[i], test_scores[i], store, options.predict);
      if (p.class_index == test[i].label) ++correct;
      if (p.fallback_used) ++fallbacks;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
    result.rows.push_back({tau, acc, fallbacks});
    if (first || acc > result.best_accuracy) {
      result.best_accuracy = acc;
      result.best_tau = tau;
      first = false;
    }
  }
  return result;
}

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::fixed << std::setprecision(6);
  out << "tau,accuracy,fallbacks\n";
  for (const auto& r : result.rows) {
    out << r.tau << ',' << r.accuracy << ',' << r.fallbacks << '\n';
  }
  out << "# best_tau=" << result.best_tau << " accuracy=" << result.best_accuracy << '\n';
  out.flags(flags);
  out.precision(precision);
}

}  // namespace gcml::eval
