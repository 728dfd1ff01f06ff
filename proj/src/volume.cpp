#include "mqc/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mqc {

Eigen::Vector3d Volume3D::world_center() const {
  Eigen::Vector4d c((dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0,
                    (dims[2] - 1) / 2.0, 1.0);
  return (affine * c).head<3>();
}

void Volume3D::check_invariants() const {
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    throw ArgumentError("Volume3D: non-positive dims");
  if (data.size() != size())
    throw ArgumentError("Volume3D: data length does not match dims");
  if (std::abs(affine.topLeftCorner<3, 3>().determinant()) < 1e-12)
    throw ArgumentError("Volume3D: singular affine");
  for (float x : data)
    if (!std::isfinite(x)) throw ArgumentError("Volume3D: non-finite value");
}

Volume3D Volume3D::zeros(std::array<int, 3> d, std::array<double, 3> sp) {
  Volume3D v;
  v.dims = d;
  v.spacing = sp;
  v.affine = Eigen::Matrix4d::Identity();
  v.affine(0, 0) = sp[0];
  v.affine(1, 1) = sp[1];
  v.affine(2, 2) = sp[2];
  v.data.assign(v.size(), 0.0f);
  return v;
}

Eigen::Matrix3d RigidTransform::rotation() const {
  const double d2r = M_PI / 180.0;
  const Eigen::AngleAxisd rx(rot_deg[0] * d2r, Eigen::Vector3d::UnitX());
  const Eigen::AngleAxisd ry(rot_deg[1] * d2r, Eigen::Vector3d::UnitY());
  const Eigen::AngleAxisd rz(rot_deg[2] * d2r, Eigen::Vector3d::UnitZ());
  return (rx * ry * rz).toRotationMatrix();
}

Eigen::Matrix4d RigidTransform::matrix(const Eigen::Vector3d& center) const {
  const Eigen::Matrix3d r = rotation();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = center - r * center + trans_mm;
  return m;
}

Eigen::Vector3d RigidTransform::angles_from_rotation(const Eigen::Matrix3d& r) {
  // R = Rx(a) Ry(b) Rz(c):
  //   R(0,2) = sin b, R(1,2) = -sin a cos b, R(0,1) = -cos b sin c
  const double r2d = 180.0 / M_PI;
  const double b = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
  double a, c;
  if (std::abs(r(0, 2)) < 1.0 - 1e-12) {
    a = std::atan2(-r(1, 2), r(2, 2));
    c = std::atan2(-r(0, 1), r(0, 0));
  } else {
    // gimbal lock: fold everything into a
    a = std::atan2(r(2, 1), r(1, 1));
    c = 0.0;
  }
  return Eigen::Vector3d(a * r2d, b * r2d, c * r2d);
}

Volume3D resample_affine(const Volume3D& v, const RigidTransform& t,
                         Interp interp, float fill) {
  return resample_affine(v, t.matrix(v.world_center()), interp, fill);
}

Volume3D resample_affine(const Volume3D& v, const Eigen::Matrix4d& world_xform,
                         Interp interp, float fill) {
  if (std::abs(world_xform.determinant()) < 1e-12)
    throw ArgumentError("resample_affine: singular transform");

  // voxel -> voxel map: out index -> source index through the inverse
  const Eigen::Matrix4d m =
      v.affine.inverse() * world_xform.inverse() * v.affine;

  Volume3D out = v;
  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  const Eigen::Vector4d step_x = m.col(0);

  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      Eigen::Vector4d p = m * Eigen::Vector4d(0, j, k, 1);
      float* row = &out.data[out.index(0, j, k)];
      for (int i = 0; i < nx; ++i, p += step_x) {
        const double x = p[0], y = p[1], z = p[2];
        float val = fill;
        if (interp == Interp::Nearest) {
          const int xi = static_cast<int>(std::lround(x));
          const int yi = static_cast<int>(std::lround(y));
          const int zi = static_cast<int>(std::lround(z));
          if (xi >= 0 && xi < nx && yi >= 0 && yi < ny && zi >= 0 && zi < nz)
            val = v.at(xi, yi, zi);
        } else {
          const int x0 = static_cast<int>(std::floor(x));
          const int y0 = static_cast<int>(std::floor(y));
          const int z0 = static_cast<int>(std::floor(z));
          const double fx = x - x0, fy = y - y0, fz = z - z0;
          double acc = 0.0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) *
                                 (dz ? fz : 1.0 - fz);
                if (w == 0.0) continue;
                const int xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
                const double s =
                    (xi >= 0 && xi < nx && yi >= 0 && yi < ny && zi >= 0 &&
                     zi < nz)
                        ? v.at(xi, yi, zi)
                        : fill;
                acc += w * s;
              }
          val = static_cast<float>(acc);
        }
        row[i] = val;
      }
    }
  }
  return out;
}

Volume3D crop_roi(const Volume3D& v, std::array<int, 3> roi) {
  for (int a = 0; a < 3; ++a)
    if (roi[a] <= 0) throw ArgumentError("crop_roi: roi must be positive");

  std::array<int, 3> start;
  for (int a = 0; a < 3; ++a) start[a] = (v.dims[a] - roi[a]) / 2;

  Volume3D out;
  out.dims = roi;
  out.spacing = v.spacing;
  out.dtype_on_disk = v.dtype_on_disk;
  out.data.assign(out.size(), 0.0f);
  out.affine = v.affine;
  out.affine.topRightCorner<3, 1>() +=
      v.affine.topLeftCorner<3, 3>() *
      Eigen::Vector3d(start[0], start[1], start[2]);

  for (int k = 0; k < roi[2]; ++k) {
    const int sk = k + start[2];
    if (sk < 0 || sk >= v.dims[2]) continue;
    for (int j = 0; j < roi[1]; ++j) {
      const int sj = j + start[1];
      if (sj < 0 || sj >= v.dims[1]) continue;
      for (int i = 0; i < roi[0]; ++i) {
        const int si = i + start[0];
        if (si < 0 || si >= v.dims[0]) continue;
        out.at(i, j, k) = v.at(si, sj, sk);
      }
    }
  }
  return out;
}

float percentile(const std::vector<float>& values, double pct) {
  if (values.empty()) throw ArgumentError("percentile: empty input");
  std::vector<float> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  const double pos = pct / 100.0 * (sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double f = pos - lo;
  return static_cast<float>((1.0 - f) * sorted[lo] + f * sorted[hi]);
}

Volume3D normalize_intensity(const Volume3D& v, double lo_pct, double hi_pct) {
  if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0))
    throw ArgumentError("normalize_intensity: bad percentile bounds");
  const float lo = percentile(v.data, lo_pct);
  const float hi = percentile(v.data, hi_pct);
  Volume3D out = v;
  if (hi <= lo) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  const float scale = 1.0f / (hi - lo);
  for (auto& x : out.data)
    x = std::clamp((x - lo) * scale, 0.0f, 1.0f);
  return out;
}

}  // namespace mqc
