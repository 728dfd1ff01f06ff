#include <doctest.h>

#include <cstring>
#include <fstream>

#include "mqc/rng.hpp"
#include "mqc/volume.hpp"
#include "test_helpers.hpp"

using namespace mqc;
using mqc::testing::TempDir;
using mqc::testing::gaussian_phantom;
using mqc::testing::max_abs_diff;

TEST_CASE("nifti write/read round-trips a minimal volume") {
  TempDir tmp("nifti_rt");
  Volume3D v = Volume3D::zeros({2, 2, 2}, {1.5, 2.0, 2.5});
  for (std::size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = static_cast<float>(i) * 0.25f;
  v.affine(0, 3) = -10.0;

  for (const char* name : {"a.nii", "a.nii.gz"}) {
    const std::string path = tmp.str(name);
    write_volume(v, path);
    const Volume3D r = read_volume(path);
    CHECK(r.dims == v.dims);
    CHECK(r.spacing[0] == doctest::Approx(1.5));
    CHECK(r.spacing[1] == doctest::Approx(2.0));
    CHECK(r.spacing[2] == doctest::Approx(2.5));
    CHECK(std::memcmp(r.data.data(), v.data.data(),
                      v.data.size() * sizeof(float)) == 0);
    CHECK((r.affine - v.affine).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("nifti read rejects bad magic and truncation") {
  TempDir tmp("nifti_bad");
  Volume3D v = Volume3D::zeros({4, 4, 4});
  const std::string path = tmp.str("v.nii");
  write_volume(v, path);

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(344);
    f.write("zzzz", 4);
    f.close();
    CHECK_THROWS_AS(read_volume(path), FormatError);
  }
  SUBCASE("bad sizeof_hdr") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    const std::int32_t wrong = 999;
    f.write(reinterpret_cast<const char*>(&wrong), 4);
    f.close();
    CHECK_THROWS_AS(read_volume(path), FormatError);
  }
  SUBCASE("truncated payload") {
    std::filesystem::resize_file(path, 352 + 10);
    CHECK_THROWS_AS(read_volume(path), CorruptFileError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_volume(tmp.str("nope.nii")), IoError);
  }
}

TEST_CASE("nifti applies int16 scl_slope/scl_inter") {
  // hand-built int16 file: value 3 with slope 2, inter 1 -> 7.0
  TempDir tmp("nifti_scl");
  const std::string path = tmp.str("s.nii");
  Volume3D v = Volume3D::zeros({1, 1, 1});
  write_volume(v, path);
  std::vector<char> bytes(352 + 2, 0);
  {
    std::ifstream in(path, std::ios::binary);
    in.read(bytes.data(), 348);
  }
  auto set16 = [&](std::size_t off, std::int16_t val) {
    std::memcpy(&bytes[off], &val, 2);
  };
  auto set32f = [&](std::size_t off, float val) {
    std::memcpy(&bytes[off], &val, 4);
  };
  set16(70, 4);    // datatype = int16
  set16(72, 16);   // bitpix
  set32f(112, 2.0f);  // scl_slope
  set32f(116, 1.0f);  // scl_inter
  const std::int16_t voxel = 3;
  std::memcpy(&bytes[352], &voxel, 2);
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), bytes.size());
  }
  const Volume3D r = read_volume(path);
  CHECK(r.data[0] == doctest::Approx(7.0));
}

TEST_CASE("nifti header layout: vox_offset 352") {
  TempDir tmp("nifti_hdr");
  const std::string path = tmp.str("v.nii");
  write_volume(Volume3D::zeros({2, 2, 2}), path);
  std::ifstream in(path, std::ios::binary);
  in.seekg(108);
  float vox_offset = 0.0f;
  in.read(reinterpret_cast<char*>(&vox_offset), 4);
  CHECK(vox_offset == 352.0f);
  in.seekg(344);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::memcmp(magic, "n+1", 4) == 0);
}

TEST_CASE("rigid transform matrix is orthonormal and round-trips angles") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    RigidTransform t;
    for (int a = 0; a < 3; ++a) {
      t.rot_deg[a] = rng.uniform(-45.0, 45.0);
      t.trans_mm[a] = rng.uniform(-20.0, 20.0);
    }
    const Eigen::Matrix3d r = t.rotation();
    CHECK((r * r.transpose() - Eigen::Matrix3d::Identity())
              .cwiseAbs()
              .maxCoeff() < 1e-9);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    const Eigen::Vector3d back = RigidTransform::angles_from_rotation(r);
    CHECK((back - t.rot_deg).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("resample identity leaves the volume unchanged") {
  const Volume3D v = gaussian_phantom({12, 10, 8});
  const Volume3D r = resample_affine(v, RigidTransform{});
  CHECK(max_abs_diff(r, v) < 1e-6);
}

TEST_CASE("resample one-voxel translation with nearest matches index shift") {
  Volume3D v = Volume3D::zeros({6, 5, 4}, {1, 1, 1});
  Rng rng(3);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform());
  RigidTransform t;
  t.trans_mm = {1.0, 0.0, 0.0};  // one voxel along x at 1 mm spacing
  const Volume3D r = resample_affine(v, t, Interp::Nearest);
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 5; ++j) {
      CHECK(r.at(0, j, k) == 0.0f);  // boundary fill
      for (int i = 1; i < 6; ++i) CHECK(r.at(i, j, k) == v.at(i - 1, j, k));
    }
}

TEST_CASE("resample scale 0.5 then 2.0 is near-identity on a smooth phantom") {
  const Volume3D v = gaussian_phantom({24, 24, 24});
  const Eigen::Vector3d c = v.world_center();
  auto scale_xform = [&](double s) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() *= s;
    m.topRightCorner<3, 1>() = c - s * c;
    return m;
  };
  const Volume3D once = resample_affine(v, scale_xform(0.5));
  const Volume3D back = resample_affine(once, scale_xform(2.0));
  // interior only; the shrunken copy lost nothing there
  double max_err = 0.0;
  for (int k = 4; k < 20; ++k)
    for (int j = 4; j < 20; ++j)
      for (int i = 4; i < 20; ++i)
        max_err = std::max(max_err, std::abs(static_cast<double>(
                                        back.at(i, j, k) - v.at(i, j, k))));
  // the half-resolution intermediate loses some detail; bound the loss
  CHECK(max_err < 0.1);
}

TEST_CASE("resample rigid round trip t then t^-1 on the interior") {
  const Volume3D v = gaussian_phantom({24, 24, 24});
  RigidTransform t;
  t.rot_deg = {4.0, -3.0, 5.0};
  t.trans_mm = {1.5, -1.0, 0.5};
  const Eigen::Matrix4d m = t.matrix(v.world_center());
  const Volume3D once = resample_affine(v, m);
  const Volume3D back = resample_affine(once, Eigen::Matrix4d(m.inverse()));
  double max_err = 0.0;
  for (int k = 6; k < 18; ++k)
    for (int j = 6; j < 18; ++j)
      for (int i = 6; i < 18; ++i)
        max_err = std::max(max_err, std::abs(static_cast<double>(
                                        back.at(i, j, k) - v.at(i, j, k))));
  CHECK(max_err < 0.05);
}

TEST_CASE("trilinear resampling is a convex combination of input values") {
  Volume3D v = Volume3D::zeros({8, 8, 8});
  Rng rng(11);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform(0.2, 0.8));
  RigidTransform t;
  t.rot_deg = {7.0, 2.0, -4.0};
  t.trans_mm = {0.3, -0.6, 0.9};
  const Volume3D r = resample_affine(v, t);
  for (float x : r.data) {
    CHECK(x >= 0.0f - 1e-6f);  // fill is 0
    CHECK(x <= 0.8f + 1e-6f);
  }
  CHECK_THROWS_AS(resample_affine(v, Eigen::Matrix4d::Zero()), ArgumentError);
}

TEST_CASE("crop_roi centers, pads, and preserves world coordinates") {
  SUBCASE("crop to the default ROI") {
    const Volume3D v = Volume3D::zeros({193, 229, 193});
    const Volume3D c = crop_roi(v, {160, 192, 160});
    CHECK(c.dims == std::array<int, 3>{160, 192, 160});
  }
  SUBCASE("identity when roi equals dims") {
    const Volume3D v = gaussian_phantom({10, 11, 12});
    const Volume3D c = crop_roi(v, {10, 11, 12});
    CHECK(max_abs_diff(c, v) == 0.0);
    CHECK((c.affine - v.affine).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("padding keeps original values centered") {
    Volume3D v = Volume3D::zeros({4, 4, 4});
    for (std::size_t i = 0; i < v.data.size(); ++i)
      v.data[i] = static_cast<float>(i + 1);
    const Volume3D c = crop_roi(v, {8, 8, 8});
    CHECK(c.dims == std::array<int, 3>{8, 8, 8});
    // start = (4-8)/2 = -2, so input voxel (0,0,0) lands at (2,2,2)
    for (int k = 0; k < 4; ++k)
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i)
          CHECK(c.at(i + 2, j + 2, k + 2) == v.at(i, j, k));
    CHECK(c.at(0, 0, 0) == 0.0f);
  }
  SUBCASE("crop preserves the multiset of retained values") {
    const Volume3D v = gaussian_phantom({9, 9, 9});
    const Volume3D c = crop_roi(v, {5, 5, 5});
    std::vector<float> kept(c.data);
    std::sort(kept.begin(), kept.end());
    std::vector<float> direct;
    for (int k = 2; k < 7; ++k)
      for (int j = 2; j < 7; ++j)
        for (int i = 2; i < 7; ++i) direct.push_back(v.at(i, j, k));
    std::sort(direct.begin(), direct.end());
    CHECK(kept == direct);
  }
  SUBCASE("world coordinate of a retained voxel is unchanged") {
    Volume3D v = gaussian_phantom({12, 12, 12}, {2.0, 2.0, 2.0});
    v.affine(0, 3) = 5.0;
    const Volume3D c = crop_roi(v, {6, 6, 6});
    // c(0,0,0) corresponds to v(3,3,3)
    const Eigen::Vector4d w_in = v.affine * Eigen::Vector4d(3, 3, 3, 1);
    const Eigen::Vector4d w_out = c.affine * Eigen::Vector4d(0, 0, 0, 1);
    CHECK((w_in - w_out).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("normalize_intensity maps percentiles to [0,1]") {
  SUBCASE("constant volume maps to zeros") {
    Volume3D v = Volume3D::zeros({4, 4, 4});
    std::fill(v.data.begin(), v.data.end(), 3.5f);
    const Volume3D n = normalize_intensity(v);
    for (float x : n.data) CHECK(x == 0.0f);
  }
  SUBCASE("uniform 0..99 with full range") {
    Volume3D v = Volume3D::zeros({100, 1, 1});
    for (int i = 0; i < 100; ++i) v.data[i] = static_cast<float>(i);
    const Volume3D n = normalize_intensity(v, 0.0, 100.0);
    CHECK(n.data[0] == 0.0f);
    CHECK(n.data[99] == 1.0f);
  }
  SUBCASE("clamping outside (1,99) percentiles") {
    Volume3D v = Volume3D::zeros({100, 1, 1});
    for (int i = 0; i < 100; ++i) v.data[i] = static_cast<float>(i);
    // sort-based oracle: p1 = 0.99, p99 = 98.01 by linear interpolation
    const float p1 = percentile(v.data, 1.0);
    const float p99 = percentile(v.data, 99.0);
    CHECK(p1 == doctest::Approx(0.99));
    CHECK(p99 == doctest::Approx(98.01));
    const Volume3D n = normalize_intensity(v, 1.0, 99.0);
    CHECK(n.data[0] == 0.0f);   // below p1 clamps to 0
    CHECK(n.data[99] == 1.0f);  // above p99 clamps to 1
    CHECK(n.data[50] ==
          doctest::Approx((50.0 - p1) / (p99 - p1)).epsilon(1e-6));
  }
  SUBCASE("bad percentile order") {
    const Volume3D v = gaussian_phantom({4, 4, 4});
    CHECK_THROWS_AS(normalize_intensity(v, 50.0, 50.0), ArgumentError);
  }
}
