#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcml/store.hpp"

namespace gcml::eval {

// counts[pred][true]: rows are predicted labels, columns are true labels.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  void add(std::size_t predicted, std::size_t truth, std::uint64_t n = 1);
  std::uint64_t at(std::size_t predicted, std::size_t truth) const;
  std::size_t classes() const { return classes_; }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  // Number of samples whose true label is `truth` (column sum).
  std::uint64_t support(std::size_t truth) const;
  // Number of samples predicted as `predicted` (row sum).
  std::uint64_t predicted_count(std::size_t predicted) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const std::size_t> predicted,
                          std::span<const std::size_t> truth, std::size_t classes);

struct Interval {
  double low = 0.0;
  double high = 0.0;

  double half_width() const { return (high - low) / 2.0; }
};

// p +/- 1.96 sqrt(p (1 - p) / n), clamped to [0, 1].
Interval wald_ci(double p, std::uint64_t n);

struct Estimate {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::uint64_t n = 0;
};

Estimate estimate(double point, std::uint64_t n);

struct MetricReport {
  Estimate accuracy;
  Estimate macro_f1;
  Estimate weighted_f1;
  Estimate sensitivity;  // macro recall
  std::vector<Estimate> per_class_accuracy;  // recall per true class, n = support
  std::vector<double> per_class_f1;
  std::uint64_t n = 0;
};

MetricReport metrics(const ConfusionMatrix& m);

struct ZTestResult {
  double z = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;
  std::uint64_t n = 0;
  double p_hat = 0.0;
};

// Pooled two-proportion test on equal-size groups:
// z = (p1 - p2) / sqrt(2 p_hat (1 - p_hat) / n), p_hat = (c1 + c2) / 2n.
ZTestResult two_proportion_z(std::uint64_t correct1, std::uint64_t correct2, std::uint64_t n);

// CSV: "name,point,ci_low,ci_high,n", one row per metric.
void write_metrics_csv(const MetricReport& report, std::span<const std::string> class_labels,
                       std::ostream& out);

// Text table with explicit axis labels.
void write_confusion_text(const ConfusionMatrix& m, std::span<const std::string> class_labels,
                          std::ostream& out);

struct SweepOptions {
  std::size_t epochs = 1;
  std::optional<std::uint64_t> augment_seed;
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  BitOrder bit_order = BitOrder::kLittle;
  PredictOptions predict;
};

struct SweepRow {
  float tau = 0.0f;
  double accuracy = 0.0;
  std::uint64_t fallbacks = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // in the order the taus were given
  float best_tau = 0.0f;       // first tau reaching the highest accuracy
  double best_accuracy = 0.0;
};

// Trains one store per tau on `train` and evaluates each on `test`.
// CAMs and scores are computed once and shared across all taus.
SweepResult tau_sweep(std::span<const TrainingSample> train, std::span<const TrainingSample> test,
                      const ClassifierHead& head, std::span<const float> taus,
                      const SweepOptions& options, std::span<const std::string> class_labels);

void write_sweep_csv(const SweepResult& result, std::ostream& out);

}  // namespace gcml::eval
