#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mqc {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CorruptFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Dense 3D scalar grid, x-fastest layout, with voxel spacing and a
/// voxel-to-world affine in mm.
struct Volume3D {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
  std::vector<float> data;
  std::int16_t dtype_on_disk = 16;  // NIfTI DT_FLOAT32

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) +
                static_cast<std::size_t>(dims[1]) * k);
  }
  float& at(int i, int j, int k) { return data[index(i, j, k)]; }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }

  /// World coordinates (mm) of the geometric volume center.
  Eigen::Vector3d world_center() const;

  /// Throws if data length, affine, or finiteness invariants are violated.
  void check_invariants() const;

  static Volume3D zeros(std::array<int, 3> d,
                        std::array<double, 3> sp = {1.0, 1.0, 1.0});
};

/// Rotation (intrinsic XYZ Euler, degrees) + translation (mm), realized
/// about a given world-space center point.
struct RigidTransform {
  Eigen::Vector3d rot_deg = Eigen::Vector3d::Zero();
  Eigen::Vector3d trans_mm = Eigen::Vector3d::Zero();

  bool is_identity(double tol = 0.0) const {
    return rot_deg.cwiseAbs().maxCoeff() <= tol &&
           trans_mm.cwiseAbs().maxCoeff() <= tol;
  }

  /// 3x3 rotation, R = Rx * Ry * Rz (intrinsic XYZ).
  Eigen::Matrix3d rotation() const;

  /// Homogeneous world-space matrix: p' = R (p - c) + c + t.
  Eigen::Matrix4d matrix(const Eigen::Vector3d& center) const;

  /// Inverse Euler extraction for R = Rx * Ry * Rz. Degrees.
  static Eigen::Vector3d angles_from_rotation(const Eigen::Matrix3d& r);
};

enum class Interp { Trilinear, Nearest };

Volume3D read_volume(const std::string& path);
void write_volume(const Volume3D& v, const std::string& path);

/// Resample v through the inverse of a world-space transform so the output
/// lives on the input grid. Out-of-bounds voxels take `fill`.
Volume3D resample_affine(const Volume3D& v, const Eigen::Matrix4d& world_xform,
                         Interp interp = Interp::Trilinear, float fill = 0.0f);
Volume3D resample_affine(const Volume3D& v, const RigidTransform& t,
                         Interp interp = Interp::Trilinear, float fill = 0.0f);

/// Center crop (or symmetric zero-pad) to the requested dims; world
/// coordinates of retained voxels are preserved.
Volume3D crop_roi(const Volume3D& v, std::array<int, 3> roi);

/// Affine map sending the lo/hi percentiles to 0/1, then clamp to [0,1].
/// Constant volumes map to all-zeros.
Volume3D normalize_intensity(const Volume3D& v, double lo_pct = 1.0,
                             double hi_pct = 99.0);

/// Linear-interpolated percentile (0..100) of the volume's values.
float percentile(const std::vector<float>& values, double pct);

}  // namespace mqc
