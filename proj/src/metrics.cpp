#include "mqc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>

namespace mqc {

ConfusionMatrix::ConfusionMatrix(int k) : k_(k), counts_(k * k, 0) {
  if (k < 1) throw ArgumentError("ConfusionMatrix: k < 1");
}

ConfusionMatrix ConfusionMatrix::from_labels(const std::vector<int>& truth,
                                             const std::vector<int>& pred,
                                             int k) {
  if (truth.size() != pred.size())
    throw ArgumentError("ConfusionMatrix: length mismatch");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= k || pred[i] < 0 || pred[i] >= k)
      throw ArgumentError("ConfusionMatrix: label out of range");
    ++cm.at(truth[i], pred[i]);
  }
  return cm;
}

long long ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), 0LL);
}

long long ConfusionMatrix::row_sum(int truth) const {
  long long s = 0;
  for (int p = 0; p < k_; ++p) s += at(truth, p);
  return s;
}

long long ConfusionMatrix::col_sum(int pred) const {
  long long s = 0;
  for (int t = 0; t < k_; ++t) s += at(t, pred);
  return s;
}

double r_squared(const std::vector<double>& truth,
                 const std::vector<double>& pred) {
  if (truth.empty() || truth.size() != pred.size())
    throw ArgumentError("r_squared: need equal nonzero lengths");
  const double mean =
      std::accumulate(truth.begin(), truth.end(), 0.0) / truth.size();
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot == 0.0)
    throw UndefinedMetricError("r_squared: constant truth");
  return 1.0 - ss_res / ss_tot;
}

double balanced_accuracy(const ConfusionMatrix& cm) {
  double acc = 0.0;
  for (int t = 0; t < cm.k(); ++t) {
    const long long row = cm.row_sum(t);
    if (row == 0)
      throw UndefinedMetricError("balanced_accuracy: no true samples of class " +
                                 std::to_string(t));
    acc += static_cast<double>(cm.at(t, t)) / static_cast<double>(row);
  }
  return acc / cm.k();
}

std::vector<double> f1_per_class(const ConfusionMatrix& cm) {
  std::vector<double> f1(cm.k(), 0.0);
  for (int c = 0; c < cm.k(); ++c) {
    const long long tp = cm.at(c, c);
    const long long row = cm.row_sum(c);
    const long long col = cm.col_sum(c);
    const double recall = row > 0 ? static_cast<double>(tp) / row : 0.0;
    const double precision = col > 0 ? static_cast<double>(tp) / col : 0.0;
    f1[c] = (precision + recall) > 0.0
                ? 2.0 * precision * recall / (precision + recall)
                : 0.0;
  }
  return f1;
}

std::vector<CalibrationPoint> calibration_curve(
    const std::vector<double>& truth, const std::vector<double>& pred,
    int n_points) {
  if (truth.empty() || truth.size() != pred.size())
    throw ArgumentError("calibration_curve: need equal nonzero lengths");
  if (n_points < 1) throw ArgumentError("calibration_curve: n_points < 1");

  const auto [lo_it, hi_it] = std::minmax_element(truth.begin(), truth.end());
  const double lo = *lo_it, hi = *hi_it;
  const double width = (hi > lo) ? (hi - lo) / n_points : 1.0;

  std::vector<double> sum(n_points, 0.0);
  std::vector<long long> count(n_points, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    int b = static_cast<int>((truth[i] - lo) / width);
    b = std::clamp(b, 0, n_points - 1);
    sum[b] += pred[i];
    ++count[b];
  }
  std::vector<CalibrationPoint> pts;
  for (int b = 0; b < n_points; ++b)
    pts.push_back({lo + (b + 0.5) * width,
                   count[b] ? sum[b] / count[b] : 0.0, count[b]});
  return pts;
}

std::string calibration_to_csv(const std::vector<CalibrationPoint>& pts) {
  std::string out = "truth_bin,mean_pred,count\n";
  char line[96];
  for (const auto& p : pts) {
    std::snprintf(line, sizeof(line), "%.9g,%.9g,%lld\n", p.truth_bin_center,
                  p.mean_pred, p.count);
    out += line;
  }
  return out;
}

std::string classification_report_json(const ConfusionMatrix& cm) {
  nlohmann::json j;
  try {
    j["balanced_accuracy"] = balanced_accuracy(cm);
  } catch (const UndefinedMetricError&) {
    j["balanced_accuracy"] = nullptr;
  }
  j["f1"] = f1_per_class(cm);
  auto rows = nlohmann::json::array();
  for (int t = 0; t < cm.k(); ++t) {
    auto row = nlohmann::json::array();
    for (int p = 0; p < cm.k(); ++p) row.push_back(cm.at(t, p));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  return j.dump(2);
}

}  // namespace mqc
