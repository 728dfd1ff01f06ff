#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mqc/kspace.hpp"
#include "mqc/volume.hpp"

namespace mqc {

struct AugmentConfig {
  std::array<int, 3> elastic_grid{7, 7, 7};
  double elastic_max_disp_mm = 8.0;
  int bias_order = 3;
  double bias_coeff_range = 0.3;
  double contrast_log_gamma_range = 0.3;
  double flip_probability = 0.5;
  double scale_min = 0.9;
  double scale_max = 1.1;
  std::array<int, 3> roi{160, 192, 160};
  double normalize_lo_pct = 1.0;
  double normalize_hi_pct = 99.0;

  bool enable_elastic = true;
  bool enable_scale = true;
  bool enable_flip = true;
  bool enable_bias = true;
  bool enable_contrast = true;
  bool enable_motion = true;

  void validate() const;
};

/// Every sampled parameter of one pipeline pass; replaying a record (not
/// its seed) reproduces the output bitwise.
struct AugmentRecord {
  std::array<int, 3> elastic_grid{0, 0, 0};
  std::vector<double> elastic_disp_mm;  // 3 per control point, x-fastest
  double scale = 1.0;
  bool flipped = false;
  int bias_order = 0;
  std::vector<double> bias_coeffs;  // lexicographic (x,y,z)-exponent order
  double gamma = 1.0;

  std::string to_json() const;
  static AugmentRecord from_json(const std::string& text);
};

Volume3D elastic_deform(const Volume3D& v, std::array<int, 3> grid,
                        double max_disp_mm, std::uint64_t seed);
Volume3D elastic_deform_with_field(const Volume3D& v, std::array<int, 3> grid,
                                   const std::vector<double>& disp_mm);
/// Dense per-voxel displacement (mm), trilinearly upsampled from the grid.
std::vector<double> elastic_dense_field(std::array<int, 3> grid,
                                        const std::vector<double>& disp_mm,
                                        std::array<int, 3> out_dims);

Volume3D bias_field(const Volume3D& v, int order, double coeff_range,
                    std::uint64_t seed);
Volume3D bias_field_with_coeffs(const Volume3D& v, int order,
                                const std::vector<double>& coeffs);
/// Number of monomials x^a y^b z^c with a+b+c <= order.
int bias_n_coeffs(int order);

Volume3D gamma_contrast(const Volume3D& v, double log_gamma_range,
                        std::uint64_t seed);
Volume3D gamma_contrast_with(const Volume3D& v, double gamma);

Volume3D sagittal_flip(const Volume3D& v);

/// Image scaling about the volume's world center (content grows for s > 1).
Volume3D random_scale_with(const Volume3D& v, double scale);

struct PipelineOutput {
  Volume3D volume;
  MotionTrace trace;
  AugmentRecord record;
};

/// Fixed-order pipeline: normalize -> elastic -> scale -> flip -> bias ->
/// contrast -> crop -> k-space motion -> renormalize to [0,1].
PipelineOutput apply_pipeline(const Volume3D& v, const AugmentConfig& cfg,
                              const MotionParams& motion, std::uint64_t seed);

/// Re-run the pipeline from recorded parameters; bitwise-identical output.
Volume3D replay_pipeline(const Volume3D& v, const AugmentConfig& cfg,
                         const AugmentRecord& record, const MotionTrace& trace);

}  // namespace mqc
