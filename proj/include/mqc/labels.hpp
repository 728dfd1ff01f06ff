#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mqc/kspace.hpp"
#include "mqc/volume.hpp"

namespace mqc {

enum class RmsAggregation { Mean, Max };

/// Configuration for the spherical RMS displacement score.
struct RmsConfig {
  double sphere_radius_mm = 80.0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  RmsAggregation aggregation = RmsAggregation::Mean;
};

/// 50-bin discretization of the motion-score range.
struct BinSpec {
  int n_bins = 50;
  double lo = -0.8;
  double hi = 4.8;
  double soft_sigma = -1.0;  // < 0 means "use the bin width"

  double width() const { return (hi - lo) / n_bins; }
  double center(int i) const { return lo + (i + 0.5) * width(); }
  double sigma() const { return soft_sigma < 0.0 ? width() : soft_sigma; }
  int nearest_bin(double x) const;
  void validate() const;
};

/// Probability vector over BinSpec bins; sums to 1.
using SoftLabel = std::vector<double>;

/// RMS displacement (mm) of points uniformly distributed in a sphere of
/// radius R centered at cfg.center, under the given rigid transform:
/// sqrt( (R^2/5) Tr(A^T A) + t.t ) with A = M3x3 - I and t the effective
/// translation at the center.
double rms_deviation(const RigidTransform& t, const RmsConfig& cfg = {});
double rms_deviation(const Eigen::Matrix4d& world_xform,
                     const RmsConfig& cfg = {});

/// Aggregate rms_deviation over all transforms of a trace (vs identity).
double trace_score(const MotionTrace& trace, const RmsConfig& cfg = {});

SoftLabel encode_soft(double x, const BinSpec& spec);
double decode_expected(const SoftLabel& p, const BinSpec& spec);

/// Sum target_i * ln(target_i / predicted_i); predicted clamped to epsilon.
double kl_divergence(const SoftLabel& target, const SoftLabel& predicted,
                     double epsilon = 1e-12);

}  // namespace mqc
