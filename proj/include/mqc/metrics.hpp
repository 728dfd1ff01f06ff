#pragma once

#include <string>
#include <vector>

#include "mqc/volume.hpp"

namespace mqc {

struct UndefinedMetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// k x k counts, rows = truth, columns = prediction.
struct ConfusionMatrix {
  explicit ConfusionMatrix(int k);
  static ConfusionMatrix from_labels(const std::vector<int>& truth,
                                     const std::vector<int>& pred, int k);

  int k() const { return k_; }
  long long& at(int truth, int pred) { return counts_[truth * k_ + pred]; }
  long long at(int truth, int pred) const { return counts_[truth * k_ + pred]; }
  long long total() const;
  long long row_sum(int truth) const;
  long long col_sum(int pred) const;

 private:
  int k_;
  std::vector<long long> counts_;
};

/// Coefficient of determination 1 - SS_res/SS_tot.
double r_squared(const std::vector<double>& truth,
                 const std::vector<double>& pred);

/// Mean per-class recall; throws naming the class if a row is empty.
double balanced_accuracy(const ConfusionMatrix& cm);

/// Per-class F1 = 2PR/(P+R); 0 when P+R = 0.
std::vector<double> f1_per_class(const ConfusionMatrix& cm);

struct CalibrationPoint {
  double truth_bin_center;
  double mean_pred;
  long long count;
};

/// Truth axis binned into n_points equal bins over its range; per-bin
/// mean prediction and count.
std::vector<CalibrationPoint> calibration_curve(
    const std::vector<double>& truth, const std::vector<double>& pred,
    int n_points);

std::string calibration_to_csv(const std::vector<CalibrationPoint>& pts);

/// {r2?, balanced_accuracy?, f1, confusion} as a JSON document.
std::string classification_report_json(const ConfusionMatrix& cm);

}  // namespace mqc
