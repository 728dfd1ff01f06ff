#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mqc/metrics.hpp"
#include "mqc/rng.hpp"

using namespace mqc;

namespace {

// naive reference implementations, written independently of the library
double oracle_r2(const std::vector<double>& t, const std::vector<double>& p) {
  const double mean = std::accumulate(t.begin(), t.end(), 0.0) / t.size();
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    ss_res += (t[i] - p[i]) * (t[i] - p[i]);
    ss_tot += (t[i] - mean) * (t[i] - mean);
  }
  return 1.0 - ss_res / ss_tot;
}

double oracle_ba(const std::vector<int>& t, const std::vector<int>& p, int k) {
  double acc = 0.0;
  for (int c = 0; c < k; ++c) {
    long long tp = 0, n = 0;
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t[i] == c) {
        ++n;
        if (p[i] == c) ++tp;
      }
    acc += static_cast<double>(tp) / n;
  }
  return acc / k;
}

std::vector<double> oracle_f1(const std::vector<int>& t,
                              const std::vector<int>& p, int k) {
  std::vector<double> out(k, 0.0);
  for (int c = 0; c < k; ++c) {
    long long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == c && p[i] == c) ++tp;
      if (t[i] != c && p[i] == c) ++fp;
      if (t[i] == c && p[i] != c) ++fn;
    }
    out[c] = (2 * tp + fp + fn) == 0
                 ? 0.0
                 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  }
  return out;
}

}  // namespace

TEST_CASE("confusion matrix bookkeeping") {
  const std::vector<int> truth{0, 0, 1, 2, 2, 2};
  const std::vector<int> pred{0, 1, 1, 2, 0, 2};
  const ConfusionMatrix cm = ConfusionMatrix::from_labels(truth, pred, 3);
  CHECK(cm.total() == 6);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(2, 2) == 2);
  CHECK(cm.at(2, 0) == 1);
  CHECK(cm.row_sum(2) == 3);
  CHECK(cm.col_sum(0) == 2);
  CHECK_THROWS_AS(ConfusionMatrix::from_labels({0, 3}, {0, 0}, 3),
                  ArgumentError);
  CHECK_THROWS_AS(ConfusionMatrix::from_labels({0}, {0, 1}, 3), ArgumentError);
}

TEST_CASE("r_squared matches the reference on random data") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + rng.uniform_int(0, 40);
    std::vector<double> t(n), p(n);
    for (int i = 0; i < n; ++i) {
      t[i] = rng.uniform(-5, 5);
      p[i] = t[i] + rng.normal() * 0.5;
    }
    if (t[0] == t[1] && n == 2) continue;  // degenerate; skip
    CHECK(r_squared(t, p) == doctest::Approx(oracle_r2(t, p)).epsilon(1e-10));
  }
  CHECK(r_squared({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(r_squared({2, 2, 2}, {1, 2, 3}), UndefinedMetricError);
  CHECK_THROWS_AS(r_squared({1, 2}, {1.0}), ArgumentError);
}

TEST_CASE("balanced accuracy and F1 match references on random labelings") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + rng.uniform_int(0, 3);
    const int n = 20 + rng.uniform_int(0, 100);
    std::vector<int> t(n), p(n);
    for (int c = 0; c < k; ++c) t[c] = c;  // guarantee nonempty rows
    for (int i = k; i < n; ++i) t[i] = rng.uniform_int(0, k - 1);
    for (int i = 0; i < n; ++i) p[i] = rng.uniform_int(0, k - 1);
    const ConfusionMatrix cm = ConfusionMatrix::from_labels(t, p, k);
    CHECK(balanced_accuracy(cm) ==
          doctest::Approx(oracle_ba(t, p, k)).epsilon(1e-12));
    const auto f1 = f1_per_class(cm);
    const auto ref = oracle_f1(t, p, k);
    REQUIRE(f1.size() == ref.size());
    for (int c = 0; c < k; ++c)
      CHECK(f1[c] == doctest::Approx(ref[c]).epsilon(1e-12));
  }
}

TEST_CASE("balanced accuracy names the empty class") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 5;
  cm.at(2, 2) = 5;  // class 1 never appears in truth
  try {
    balanced_accuracy(cm);
    FAIL("expected UndefinedMetricError");
  } catch (const UndefinedMetricError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("majority-class predictor on an imbalanced three-class set") {
  // class sizes 9 / 90 / 125; everything predicted as the largest class
  std::vector<int> truth, pred;
  for (int i = 0; i < 9; ++i) truth.push_back(0);
  for (int i = 0; i < 90; ++i) truth.push_back(1);
  for (int i = 0; i < 125; ++i) truth.push_back(2);
  pred.assign(truth.size(), 2);
  const ConfusionMatrix cm = ConfusionMatrix::from_labels(truth, pred, 3);
  CHECK(balanced_accuracy(cm) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  const auto f1 = f1_per_class(cm);
  CHECK(f1[0] == 0.0);
  CHECK(f1[1] == 0.0);
  CHECK(f1[2] == doctest::Approx(2.0 * 125 / (125 + 224)).epsilon(1e-12));
  CHECK(f1[2] == doctest::Approx(0.7163).epsilon(2e-4));
}

TEST_CASE("calibration curve bins truth and averages predictions") {
  // truth spans [0, 4]; two points per bin with known means
  std::vector<double> truth, pred;
  for (int b = 0; b < 4; ++b) {
    const double lo = b, hi = b + 1;
    truth.push_back(lo + 0.25);
    pred.push_back(10.0 * b);
    truth.push_back(lo + 0.75);
    pred.push_back(10.0 * b + 2.0);
    (void)hi;
  }
  const auto pts = calibration_curve(truth, pred, 4);
  REQUIRE(pts.size() == 4);
  for (int b = 0; b < 4; ++b) {
    CHECK(pts[b].count == 2);
    CHECK(pts[b].mean_pred == doctest::Approx(10.0 * b + 1.0).epsilon(1e-12));
    // bins span the observed truth range [0.25, 3.75]
    CHECK(pts[b].truth_bin_center ==
          doctest::Approx(0.25 + (b + 0.5) * 3.5 / 4.0).epsilon(1e-12));
  }

  SUBCASE("max truth value lands in the last bin") {
    const auto p2 = calibration_curve({0.0, 1.0, 2.0}, {1.0, 2.0, 3.0}, 2);
    REQUIRE(p2.size() == 2);
    CHECK(p2[0].count == 1);
    CHECK(p2[1].count == 2);
    CHECK(p2[1].mean_pred == doctest::Approx(2.5));
  }
  SUBCASE("CSV serialization") {
    const std::string text = calibration_to_csv(pts);
    CHECK(text.find("truth_bin,mean_pred,count") == 0);
    // header + 4 rows
    CHECK(std::count(text.begin(), text.end(), '\n') == 5);
  }
}

TEST_CASE("classification report JSON contains the headline numbers") {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2};
  const std::vector<int> pred{0, 1, 1, 1, 2, 0};
  const ConfusionMatrix cm = ConfusionMatrix::from_labels(truth, pred, 3);
  const std::string text = classification_report_json(cm);
  CHECK(text.find("balanced_accuracy") != std::string::npos);
  CHECK(text.find("f1") != std::string::npos);
  CHECK(text.find("confusion") != std::string::npos);
}
