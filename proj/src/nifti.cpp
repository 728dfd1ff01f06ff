#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "mqc/volume.hpp"

namespace mqc {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;     // must be 348
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;

void swap16(std::int16_t& v) {
  auto* b = reinterpret_cast<unsigned char*>(&v);
  std::swap(b[0], b[1]);
}
void swap32(void* p) {
  auto* b = static_cast<unsigned char*>(p);
  std::swap(b[0], b[3]);
  std::swap(b[1], b[2]);
}

void byte_swap_header(Nifti1Header& h) {
  swap32(&h.sizeof_hdr);
  swap32(&h.extents);
  swap16(h.session_error);
  for (auto& d : h.dim) swap16(d);
  swap32(&h.intent_p1);
  swap32(&h.intent_p2);
  swap32(&h.intent_p3);
  swap16(h.intent_code);
  swap16(h.datatype);
  swap16(h.bitpix);
  swap16(h.slice_start);
  for (auto& p : h.pixdim) swap32(&p);
  swap32(&h.vox_offset);
  swap32(&h.scl_slope);
  swap32(&h.scl_inter);
  swap16(h.slice_end);
  swap32(&h.cal_max);
  swap32(&h.cal_min);
  swap32(&h.slice_duration);
  swap32(&h.toffset);
  swap32(&h.glmax);
  swap32(&h.glmin);
  swap16(h.qform_code);
  swap16(h.sform_code);
  swap32(&h.quatern_b);
  swap32(&h.quatern_c);
  swap32(&h.quatern_d);
  swap32(&h.qoffset_x);
  swap32(&h.qoffset_y);
  swap32(&h.qoffset_z);
  for (auto& v : h.srow_x) swap32(&v);
  for (auto& v : h.srow_y) swap32(&v);
  for (auto& v : h.srow_z) swap32(&v);
}

Eigen::Matrix4d affine_from_header(const Nifti1Header& h) {
  Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
  if (h.sform_code > 0) {
    for (int c = 0; c < 4; ++c) {
      a(0, c) = h.srow_x[c];
      a(1, c) = h.srow_y[c];
      a(2, c) = h.srow_z[c];
    }
    return a;
  }
  if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    double aa = 1.0 - b * b - c * c - d * d;
    aa = aa < 0.0 ? 0.0 : std::sqrt(aa);
    Eigen::Quaterniond q(aa, b, c, d);
    Eigen::Matrix3d r = q.toRotationMatrix();
    const double qfac = (h.pixdim[0] < 0.0f) ? -1.0 : 1.0;
    Eigen::Vector3d sp(h.pixdim[1], h.pixdim[2], qfac * h.pixdim[3]);
    a.topLeftCorner<3, 3>() = r * sp.asDiagonal();
    a.topRightCorner<3, 1>() =
        Eigen::Vector3d(h.qoffset_x, h.qoffset_y, h.qoffset_z);
    return a;
  }
  a(0, 0) = h.pixdim[1];
  a(1, 1) = h.pixdim[2];
  a(2, 2) = h.pixdim[3];
  return a;
}

// gzread handles plain (uncompressed) files transparently as well.
struct GzReader {
  gzFile f;
  explicit GzReader(const std::string& path) {
    f = gzopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open " + path);
  }
  ~GzReader() { gzclose(f); }
  std::size_t read(void* buf, std::size_t n) {
    const int got = gzread(f, buf, static_cast<unsigned>(n));
    return got < 0 ? 0 : static_cast<std::size_t>(got);
  }
};

}  // namespace

Volume3D read_volume(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path);
  GzReader in(path);

  Nifti1Header h{};
  if (in.read(&h, sizeof(h)) != sizeof(h))
    throw FormatError(path + ": file shorter than a NIfTI-1 header");

  bool swapped = false;
  if (h.dim[0] < 1 || h.dim[0] > 7) {
    byte_swap_header(h);
    swapped = true;
  }
  if (h.sizeof_hdr != 348)
    throw FormatError(path + ": sizeof_hdr != 348, not a NIfTI-1 file");
  if (std::memcmp(h.magic, "n+1", 4) != 0 && std::memcmp(h.magic, "ni1", 4) != 0)
    throw FormatError(path + ": bad magic, not a NIfTI-1 file");
  if (std::memcmp(h.magic, "ni1", 4) == 0)
    throw UnsupportedError(path + ": two-file (.hdr/.img) NIfTI not supported");
  if (h.dim[0] < 3)
    throw FormatError(path + ": expected at least 3 dimensions");

  Volume3D v;
  v.dims = {h.dim[1], h.dim[2], h.dim[3]};
  for (int a = 0; a < 3; ++a)
    if (v.dims[a] <= 0) throw FormatError(path + ": non-positive dim");
  v.spacing = {std::abs(h.pixdim[1]), std::abs(h.pixdim[2]),
               std::abs(h.pixdim[3])};
  for (auto& s : v.spacing)
    if (!(s > 0.0)) s = 1.0;
  v.affine = affine_from_header(h);
  v.dtype_on_disk = h.datatype;

  std::size_t bytes_per;
  switch (h.datatype) {
    case kDtUint8: bytes_per = 1; break;
    case kDtInt16: bytes_per = 2; break;
    case kDtFloat32: bytes_per = 4; break;
    default:
      throw UnsupportedError(path + ": unsupported datatype " +
                             std::to_string(h.datatype));
  }

  const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
  if (offset > sizeof(h)) {
    std::vector<char> skip(offset - sizeof(h));
    if (in.read(skip.data(), skip.size()) != skip.size())
      throw CorruptFileError(path + ": truncated before voxel data");
  }

  const std::size_t n = v.size();
  std::vector<unsigned char> raw(n * bytes_per);
  if (in.read(raw.data(), raw.size()) != raw.size())
    throw CorruptFileError(path + ": truncated voxel payload");

  const float slope = (h.scl_slope != 0.0f) ? h.scl_slope : 1.0f;
  const float inter = (h.scl_slope != 0.0f) ? h.scl_inter : 0.0f;

  v.data.resize(n);
  if (h.datatype == kDtUint8) {
    for (std::size_t i = 0; i < n; ++i) v.data[i] = raw[i] * slope + inter;
  } else if (h.datatype == kDtInt16) {
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t s;
      std::memcpy(&s, &raw[2 * i], 2);
      if (swapped) swap16(s);
      v.data[i] = s * slope + inter;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, &raw[4 * i], 4);
      if (swapped) swap32(&f);
      v.data[i] = f * slope + inter;
    }
  }
  return v;
}

void write_volume(const Volume3D& v, const std::string& path) {
  v.check_invariants();

  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(v.dims[0]);
  h.dim[2] = static_cast<std::int16_t>(v.dims[1]);
  h.dim[3] = static_cast<std::int16_t>(v.dims[2]);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = kDtFloat32;
  h.bitpix = 32;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(v.spacing[0]);
  h.pixdim[2] = static_cast<float>(v.spacing[1]);
  h.pixdim[3] = static_cast<float>(v.spacing[2]);
  for (int i = 4; i < 8; ++i) h.pixdim[i] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // NIFTI_UNITS_MM
  h.sform_code = 1;  // scanner-anatomical
  h.qform_code = 0;
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = static_cast<float>(v.affine(0, c));
    h.srow_y[c] = static_cast<float>(v.affine(1, c));
    h.srow_z[c] = static_cast<float>(v.affine(2, c));
  }
  std::memcpy(h.magic, "n+1", 4);

  const char pad[4] = {0, 0, 0, 0};
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  const std::size_t bytes = v.size() * sizeof(float);

  if (gz) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw IoError("cannot open for writing: " + path);
    bool ok = gzwrite(f, &h, sizeof(h)) == static_cast<int>(sizeof(h)) &&
              gzwrite(f, pad, 4) == 4 &&
              gzwrite(f, v.data.data(), static_cast<unsigned>(bytes)) ==
                  static_cast<int>(bytes);
    ok = (gzclose(f) == Z_OK) && ok;
    if (!ok) throw IoError("write failed: " + path);
  } else {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);
    bool ok = std::fwrite(&h, 1, sizeof(h), f) == sizeof(h) &&
              std::fwrite(pad, 1, 4, f) == 4 &&
              std::fwrite(v.data.data(), 1, bytes, f) == bytes;
    ok = (std::fclose(f) == 0) && ok;
    if (!ok) throw IoError("write failed: " + path);
  }
}

}  // namespace mqc
