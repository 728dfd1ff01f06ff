#include "mqc/labels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mqc {

int BinSpec::nearest_bin(double x) const {
  const int i = static_cast<int>(std::floor((x - lo) / width()));
  return std::clamp(i, 0, n_bins - 1);
}

void BinSpec::validate() const {
  if (!(lo < hi)) throw ArgumentError("BinSpec: lo must be < hi");
  if (n_bins < 2) throw ArgumentError("BinSpec: need at least 2 bins");
}

double rms_deviation(const Eigen::Matrix4d& world_xform, const RmsConfig& cfg) {
  const Eigen::Matrix4d m = world_xform - Eigen::Matrix4d::Identity();
  const Eigen::Matrix3d a = m.topLeftCorner<3, 3>();
  // effective translation once the origin is moved to the sphere center
  const Eigen::Vector3d t = m.topRightCorner<3, 1>() + a * cfg.center;
  const double r2 = cfg.sphere_radius_mm * cfg.sphere_radius_mm;
  return std::sqrt(r2 / 5.0 * (a.transpose() * a).trace() + t.squaredNorm());
}

double rms_deviation(const RigidTransform& t, const RmsConfig& cfg) {
  return rms_deviation(t.matrix(cfg.center), cfg);
}

double trace_score(const MotionTrace& trace, const RmsConfig& cfg) {
  if (trace.transforms.empty())
    throw ArgumentError("trace_score: empty trace");
  double acc = (cfg.aggregation == RmsAggregation::Max)
                   ? -std::numeric_limits<double>::infinity()
                   : 0.0;
  for (const auto& t : trace.transforms) {
    const double s = rms_deviation(t, cfg);
    if (cfg.aggregation == RmsAggregation::Max)
      acc = std::max(acc, s);
    else
      acc += s;
  }
  if (cfg.aggregation == RmsAggregation::Mean)
    acc /= static_cast<double>(trace.transforms.size());
  return acc;
}

SoftLabel encode_soft(double x, const BinSpec& spec) {
  spec.validate();
  if (!std::isfinite(x)) throw ArgumentError("encode_soft: non-finite score");
  SoftLabel p(spec.n_bins, 0.0);
  const double sigma = spec.sigma();
  if (sigma <= 0.0) {
    p[spec.nearest_bin(x)] = 1.0;
    return p;
  }
  // Shift densities by the max exponent before normalizing; keeps far
  // out-of-range scores from underflowing to an all-zero vector.
  double max_e = -std::numeric_limits<double>::infinity();
  std::vector<double> e(spec.n_bins);
  for (int i = 0; i < spec.n_bins; ++i) {
    const double d = (spec.center(i) - x) / sigma;
    e[i] = -0.5 * d * d;
    max_e = std::max(max_e, e[i]);
  }
  double sum = 0.0;
  for (int i = 0; i < spec.n_bins; ++i) {
    p[i] = std::exp(e[i] - max_e);
    sum += p[i];
  }
  for (auto& q : p) q /= sum;
  return p;
}

double decode_expected(const SoftLabel& p, const BinSpec& spec) {
  spec.validate();
  if (static_cast<int>(p.size()) != spec.n_bins)
    throw ArgumentError("decode_expected: label length mismatch");
  double acc = 0.0;
  for (int i = 0; i < spec.n_bins; ++i) acc += p[i] * spec.center(i);
  return acc;
}

double kl_divergence(const SoftLabel& target, const SoftLabel& predicted,
                     double epsilon) {
  if (target.size() != predicted.size())
    throw ArgumentError("kl_divergence: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] <= 0.0) continue;
    acc += target[i] * std::log(target[i] / std::max(predicted[i], epsilon));
  }
  return std::max(acc, 0.0);
}

}  // namespace mqc
