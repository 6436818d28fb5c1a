#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gcml/eval.hpp"
#include "gcml/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gcml;
using namespace gcml::eval;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix m(rows.size());
  for (std::size_t p = 0; p < rows.size(); ++p)
    for (std::size_t t = 0; t < rows.size(); ++t) m.add(p, t, rows[p][t]);
  return m;
}

}  // namespace

TEST_CASE("confusion tallies predicted x true") {
  const std::vector<std::size_t> same{0, 1, 2, 1};
  const auto diag = confusion(same, same, 3);
  CHECK(diag.at(0, 0) == 1);
  CHECK(diag.at(1, 1) == 2);
  CHECK(diag.trace() == 4);

  const std::vector<std::size_t> p{1}, t{0};
  const auto one = confusion(p, t, 2);
  CHECK(one.at(1, 0) == 1);
  CHECK(one.at(0, 1) == 0);
  CHECK(one.support(0) == 1);
  CHECK(one.predicted_count(1) == 1);

  const std::vector<std::size_t> longer{0, 1};
  CHECK_GCML_ERROR(confusion(longer, t, 2), ErrorCode::kDimensionMismatch);
  const std::vector<std::size_t> bad{3};
  CHECK_GCML_ERROR(confusion(bad, t, 2), ErrorCode::kOutOfRange);
}

TEST_CASE("confusion matches a naive tally") {
  std::mt19937_64 rng(41);
  std::vector<std::size_t> preds(1000), truth(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    preds[i] = rng() % 4;
    truth[i] = rng() % 4;
  }
  const auto m = confusion(preds, truth, 4);
  const auto expected = oracle::tally(preds, truth, 4);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t t = 0; t < 4; ++t) CHECK(m.at(p, t) == expected[p][t]);
  CHECK(m.total() == 1000);
}

TEST_CASE("metrics on an identity matrix") {
  const auto r = metrics(from_rows({{4, 0, 0}, {0, 5, 0}, {0, 0, 6}}));
  CHECK(r.accuracy.point == 1.0);
  CHECK(r.accuracy.ci_low == 1.0);
  CHECK(r.accuracy.ci_high == 1.0);
  CHECK(r.sensitivity.point == 1.0);
  CHECK(r.macro_f1.point == 1.0);
  for (const auto& e : r.per_class_accuracy) CHECK(e.point == 1.0);
  CHECK(r.n == 15);
}

TEST_CASE("metrics on a small matrix match frozen reference values") {
  // Rows predicted, columns true. Reference values from scikit-learn on the
  // equivalent label lists.
  const auto r = metrics(from_rows({{5, 1, 0}, {2, 3, 1}, {0, 1, 7}}));
  CHECK(r.accuracy.point == doctest::Approx(0.75));
  CHECK(r.macro_f1.point == doctest::Approx(0.7298951048951049));
  CHECK(r.weighted_f1.point == doctest::Approx(0.7555944055944056));
  CHECK(r.sensitivity.point == doctest::Approx(0.7297619047619047));
  CHECK(r.per_class_f1[0] == doctest::Approx(0.76923077));
  CHECK(r.per_class_f1[1] == doctest::Approx(0.54545455));
  CHECK(r.per_class_f1[2] == doctest::Approx(0.875));
  CHECK(r.per_class_accuracy[0].point == doctest::Approx(5.0 / 7.0));
  CHECK(r.per_class_accuracy[0].n == 7);
  CHECK(r.accuracy.n == 20);
}

TEST_CASE("metric invariants on random matrices") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng() % 4;
    ConfusionMatrix m(c);
    for (std::size_t p = 0; p < c; ++p)
      for (std::size_t t = 0; t < c; ++t) m.add(p, t, rng() % 20);
    m.add(0, 0, 1);
    const auto r = metrics(m);
    // Accuracy == support-weighted per-class accuracy.
    double weighted = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      weighted += r.per_class_accuracy[k].point * static_cast<double>(m.support(k));
    }
    CHECK(r.accuracy.point == doctest::Approx(weighted / static_cast<double>(m.total())));
    for (const auto* e : {&r.accuracy, &r.macro_f1, &r.weighted_f1, &r.sensitivity}) {
      CHECK(e->ci_low <= e->point);
      CHECK(e->point <= e->ci_high);
      CHECK(e->ci_low >= 0.0);
      CHECK(e->ci_high <= 1.0);
    }
  }
}

TEST_CASE("zero-support and never-predicted classes score zero") {
  const auto r = metrics(from_rows({{3, 0, 0}, {0, 0, 0}, {1, 0, 0}}));
  CHECK(r.per_class_accuracy[1].point == 0.0);
  CHECK(r.per_class_accuracy[1].n == 0);
  CHECK(r.per_class_f1[1] == 0.0);
  CHECK(r.per_class_f1[2] == 0.0);
  CHECK_GCML_ERROR(metrics(ConfusionMatrix(2)), ErrorCode::kInvalidArgument);
}

TEST_CASE("wald_ci") {
  CHECK(wald_ci(0.5, 100).half_width() == doctest::Approx(0.098));
  const auto full = wald_ci(1.0, 50);
  CHECK(full.low == 1.0);
  CHECK(full.high == 1.0);
  CHECK(std::abs(wald_ci(0.948, 580).half_width() - 0.018) <= 0.001);
  // Clamped at the edges.
  CHECK(wald_ci(0.01, 10).low == 0.0);
  CHECK_GCML_ERROR(wald_ci(0.5, 0), ErrorCode::kInvalidArgument);
  CHECK_GCML_ERROR(wald_ci(1.5, 10), ErrorCode::kInvalidArgument);

  // Half-width peaks at 0.5 and shrinks as 1/sqrt(n).
  for (double p : {0.1, 0.3, 0.45, 0.55, 0.9}) {
    CHECK(wald_ci(p, 400).half_width() < wald_ci(0.5, 400).half_width());
  }
  CHECK(wald_ci(0.5, 400).half_width() == doctest::Approx(wald_ci(0.5, 100).half_width() / 2));
}

TEST_CASE("two_proportion_z") {
  const auto r = two_proportion_z(245, 252, 268);
  CHECK(r.z >= -1.17);
  CHECK(r.z <= -1.15);
  CHECK(r.z == doctest::Approx(-1.1640454482991778));
  CHECK(r.p_hat == doctest::Approx(497.0 / 536.0));
  CHECK(two_proportion_z(100, 100, 200).z == 0.0);
  CHECK(two_proportion_z(0, 0, 10).z == 0.0);
  CHECK(two_proportion_z(252, 245, 268).z == -r.z);

  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 500; ++trial) {
    const std::uint64_t n = 1 + rng() % 500;
    const std::uint64_t a = rng() % (n + 1), b = rng() % (n + 1);
    const auto ab = two_proportion_z(a, b, n);
    const auto ba = two_proportion_z(b, a, n);
    CHECK(ab.z == -ba.z);
    if (a > b) CHECK(ab.z > 0.0);
    if (a < b) CHECK(ab.z < 0.0);
  }
  CHECK_GCML_ERROR(two_proportion_z(11, 3, 10), ErrorCode::kInvalidArgument);
  CHECK_GCML_ERROR(two_proportion_z(1, 1, 0), ErrorCode::kInvalidArgument);
}

TEST_CASE("metric CSV and confusion text") {
  const auto m = from_rows({{2, 1}, {0, 3}});
  std::ostringstream csv;
  const std::vector<std::string> labels{"covid", "normal"};
  write_metrics_csv(metrics(m), labels, csv);
  const auto text = csv.str();
  CHECK(text.rfind("name,point,ci_low,ci_high,n\n", 0) == 0);
  CHECK(text.find("accuracy,0.833333,") != std::string::npos);
  CHECK(text.find("class_accuracy:covid,1.000000,1.000000,1.000000,2\n") != std::string::npos);

  std::ostringstream cm;
  write_confusion_text(m, labels, cm);
  CHECK(cm.str().find("rows: predicted label, columns: true label") != std::string::npos);
  CHECK(cm.str().find("covid") != std::string::npos);
}

TEST_CASE("tau_sweep") {
  const auto spec = synth::paired_corner_spec(0.1f, 0.1f);
  const auto train = synth::gen_spatial_classes(spec, 1, 150);
  const auto test = synth::gen_spatial_classes(spec, 2, 100);
  const auto head = synth::unit_head(2);
  SweepOptions opts;

  SUBCASE("one tau -> one row") {
    const std::vector<float> taus{0.5f};
    const auto r = tau_sweep(train.samples, test.samples, head, taus, opts, train.class_labels);
    CHECK(r.rows.size() == 1);
    CHECK(r.best_tau == 0.5f);
  }
  SUBCASE("spatial dataset: moderate tau separates, extreme tau does not") {
    const std::vector<float> taus{0.3f, 0.1f, 0.05f, 0.009f, 0.001f, 0.999f};
    const auto r = tau_sweep(train.samples, test.samples, head, taus, opts, train.class_labels);
    REQUIRE(r.rows.size() == 6);
    CHECK(r.best_accuracy >= 0.95);
    CHECK(r.rows.back().accuracy <= 0.65);
    CHECK(r.best_tau != 0.999f);
  }
  SUBCASE("deterministic output") {
    const std::vector<float> taus{0.3f, 0.1f, 0.05f, 0.009f, 0.001f};
    opts.epochs = 3;
    opts.augment_seed = 5;
    std::ostringstream a, b;
    write_sweep_csv(tau_sweep(train.samples, test.samples, head, taus, opts, train.class_labels), a);
    write_sweep_csv(tau_sweep(train.samples, test.samples, head, taus, opts, train.class_labels), b);
    const auto text = a.str();
    CHECK(text == b.str());
    CHECK(std::count(text.begin(), text.end(), '\n') == 7);
  }
  SUBCASE("sweep rows equal individually trained stores") {
    const std::vector<float> taus{0.2f, 0.7f};
    const auto r = tau_sweep(train.samples, test.samples, head, taus, opts, train.class_labels);
    for (std::size_t i = 0; i < taus.size(); ++i) {
      GcmlConfig cfg;
      cfg.tau = taus[i];
      GcmlStore store(train.class_labels, cfg);
      train_epoch(store, train.samples, head);
      CHECK(r.rows[i].accuracy == synth::gcml_accuracy(test.samples, head, store));
    }
  }
  SUBCASE("errors") {
    const std::vector<float> none;
    CHECK_GCML_ERROR(tau_sweep(train.samples, test.samples, head, none, opts, train.class_labels),
                     ErrorCode::kInvalidArgument);
    const std::vector<float> bad{1.5f};
    CHECK_GCML_ERROR(tau_sweep(train.samples, test.samples, head, bad, opts, train.class_labels),
                     ErrorCode::kInvalidArgument);
  }
}
