#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "mqc/volume.hpp"

namespace mqc {

using Complex = std::complex<double>;

/// Unnormalized forward 3D DFT over an x-fastest grid, in place.
void fft3(std::vector<Complex>& data, std::array<int, 3> dims);
/// Inverse 3D DFT scaled by 1/(nx*ny*nz), in place.
void ifft3(std::vector<Complex>& data, std::array<int, 3> dims);

/// Sampling ranges for synthetic motion.
struct MotionParams {
  double rotation_range_deg = 10.0;   // per-axis max |angle|
  double translation_range_mm = 10.0; // per-axis max |shift|
  int n_transforms_min = 1;
  int n_transforms_max = 8;
  int phase_axis = 1;          // A-P axis of the ROI
  bool random_phase_axis = false;

  void validate() const;
};

/// The sampled rigid transforms plus the k-space segment layout.
/// boundaries holds N+1 strictly increasing values; the last equals the
/// phase-axis extent, so segment 0 = [0, b0) belongs to the unmoved
/// reference and segment i >= 1 = [b_{i-1}, b_i) to transforms[i-1].
struct MotionTrace {
  std::vector<RigidTransform> transforms;
  std::vector<int> segment_boundaries;
  int phase_axis = 1;
  std::uint64_t rng_seed = 0;

  int n_transforms() const { return static_cast<int>(transforms.size()); }
  void validate(int extent) const;
};

MotionTrace sample_motion_trace(const MotionParams& params, int extent,
                                std::uint64_t seed);

/// Assemble a composite k-space from per-transform FFTs and return the
/// magnitude image. Output dims equal input dims.
Volume3D corrupt_with_motion(const Volume3D& v, const MotionTrace& trace);

std::string motion_trace_to_json(const MotionTrace& trace, double rms_score);
MotionTrace motion_trace_from_json(const std::string& json_text,
                                   double* rms_score_out = nullptr);

}  // namespace mqc
