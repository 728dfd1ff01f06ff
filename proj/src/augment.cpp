#include "mqc/augment.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "mqc/rng.hpp"

namespace mqc {
namespace {

// Sub-stream ids so every stage draws from an independent generator.
enum StageId : std::uint64_t {
  kElastic = 1,
  kScale = 2,
  kFlip = 3,
  kBias = 4,
  kContrast = 5,
  kMotion = 6,
};

float sample_trilinear(const Volume3D& v, double x, double y, double z,
                       float fill) {
  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
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
        const double s = (xi >= 0 && xi < nx && yi >= 0 && yi < ny &&
                          zi >= 0 && zi < nz)
                             ? v.at(xi, yi, zi)
                             : fill;
        acc += w * s;
      }
  return static_cast<float>(acc);
}

// Clamp below at 0 and rescale by the max only when values exceed 1, so an
// already-normalized volume passes through untouched.
Volume3D renormalize_unit(Volume3D v) {
  float maxv = 0.0f;
  for (auto& x : v.data) {
    if (x < 0.0f) x = 0.0f;
    maxv = std::max(maxv, x);
  }
  if (maxv > 1.0f)
    for (auto& x : v.data) x /= maxv;
  return v;
}

}  // namespace

void AugmentConfig::validate() const {
  if (elastic_max_disp_mm < 0.0 || bias_coeff_range < 0.0 ||
      contrast_log_gamma_range < 0.0)
    throw ArgumentError("AugmentConfig: ranges must be nonnegative");
  if (flip_probability < 0.0 || flip_probability > 1.0)
    throw ArgumentError("AugmentConfig: flip_probability out of [0,1]");
  if (!(scale_min > 0.0) || scale_max < scale_min)
    throw ArgumentError("AugmentConfig: bad scale range");
  if (bias_order < 0) throw ArgumentError("AugmentConfig: bias_order < 0");
  for (int a = 0; a < 3; ++a) {
    if (elastic_grid[a] < 2)
      throw ArgumentError("AugmentConfig: elastic grid dims must be >= 2");
    if (roi[a] <= 0) throw ArgumentError("AugmentConfig: roi must be positive");
  }
}

std::vector<double> elastic_dense_field(std::array<int, 3> grid,
                                        const std::vector<double>& disp_mm,
                                        std::array<int, 3> out_dims) {
  const std::size_t n_ctrl =
      static_cast<std::size_t>(grid[0]) * grid[1] * grid[2];
  if (disp_mm.size() != 3 * n_ctrl)
    throw ArgumentError("elastic_dense_field: displacement length mismatch");

  std::vector<double> field(3 * static_cast<std::size_t>(out_dims[0]) *
                            out_dims[1] * out_dims[2]);
  auto ctrl = [&](int i, int j, int k, int c) {
    return disp_mm[3 * (static_cast<std::size_t>(i) +
                        static_cast<std::size_t>(grid[0]) *
                            (j + static_cast<std::size_t>(grid[1]) * k)) +
                   c];
  };
  std::size_t out = 0;
  for (int k = 0; k < out_dims[2]; ++k)
    for (int j = 0; j < out_dims[1]; ++j)
      for (int i = 0; i < out_dims[0]; ++i) {
        const double gx = out_dims[0] > 1
                              ? static_cast<double>(i) / (out_dims[0] - 1) *
                                    (grid[0] - 1)
                              : 0.0;
        const double gy = out_dims[1] > 1
                              ? static_cast<double>(j) / (out_dims[1] - 1) *
                                    (grid[1] - 1)
                              : 0.0;
        const double gz = out_dims[2] > 1
                              ? static_cast<double>(k) / (out_dims[2] - 1) *
                                    (grid[2] - 1)
                              : 0.0;
        const int x0 = std::min(static_cast<int>(gx), grid[0] - 2);
        const int y0 = std::min(static_cast<int>(gy), grid[1] - 2);
        const int z0 = std::min(static_cast<int>(gz), grid[2] - 2);
        const double fx = gx - x0, fy = gy - y0, fz = gz - z0;
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                acc += (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) *
                       (dz ? fz : 1.0 - fz) *
                       ctrl(x0 + dx, y0 + dy, z0 + dz, c);
          field[3 * out + c] = acc;
        }
        ++out;
      }
  return field;
}

Volume3D elastic_deform_with_field(const Volume3D& v, std::array<int, 3> grid,
                                   const std::vector<double>& disp_mm) {
  const auto field = elastic_dense_field(grid, disp_mm, v.dims);
  Volume3D out = v;
  std::size_t idx = 0;
  for (int k = 0; k < v.dims[2]; ++k)
    for (int j = 0; j < v.dims[1]; ++j)
      for (int i = 0; i < v.dims[0]; ++i) {
        const double dx = field[3 * idx + 0] / v.spacing[0];
        const double dy = field[3 * idx + 1] / v.spacing[1];
        const double dz = field[3 * idx + 2] / v.spacing[2];
        out.data[idx] = sample_trilinear(v, i + dx, j + dy, k + dz, 0.0f);
        ++idx;
      }
  return out;
}

Volume3D elastic_deform(const Volume3D& v, std::array<int, 3> grid,
                        double max_disp_mm, std::uint64_t seed) {
  for (int a = 0; a < 3; ++a)
    if (grid[a] < 2) throw ArgumentError("elastic_deform: grid dims < 2");
  Rng rng(seed);
  const std::size_t n_ctrl =
      static_cast<std::size_t>(grid[0]) * grid[1] * grid[2];
  std::vector<double> disp(3 * n_ctrl);
  for (auto& d : disp) d = rng.uniform(-max_disp_mm, max_disp_mm);
  return elastic_deform_with_field(v, grid, disp);
}

int bias_n_coeffs(int order) {
  int n = 0;
  for (int a = 0; a <= order; ++a)
    for (int b = 0; a + b <= order; ++b)
      for (int c = 0; a + b + c <= order; ++c) ++n;
  return n;
}

Volume3D bias_field_with_coeffs(const Volume3D& v, int order,
                                const std::vector<double>& coeffs) {
  if (static_cast<int>(coeffs.size()) != bias_n_coeffs(order))
    throw ArgumentError("bias_field: coefficient count mismatch");
  Volume3D out = v;
  std::size_t idx = 0;
  for (int k = 0; k < v.dims[2]; ++k) {
    const double z = v.dims[2] > 1 ? 2.0 * k / (v.dims[2] - 1) - 1.0 : 0.0;
    for (int j = 0; j < v.dims[1]; ++j) {
      const double y = v.dims[1] > 1 ? 2.0 * j / (v.dims[1] - 1) - 1.0 : 0.0;
      for (int i = 0; i < v.dims[0]; ++i) {
        const double x = v.dims[0] > 1 ? 2.0 * i / (v.dims[0] - 1) - 1.0 : 0.0;
        double p = 0.0;
        int c_idx = 0;
        for (int a = 0; a <= order; ++a)
          for (int b = 0; a + b <= order; ++b)
            for (int c = 0; a + b + c <= order; ++c)
              p += coeffs[c_idx++] * std::pow(x, a) * std::pow(y, b) *
                   std::pow(z, c);
        out.data[idx] = static_cast<float>(v.data[idx] * std::exp(p));
        ++idx;
      }
    }
  }
  return out;
}

Volume3D bias_field(const Volume3D& v, int order, double coeff_range,
                    std::uint64_t seed) {
  if (order < 0) throw ArgumentError("bias_field: order < 0");
  Rng rng(seed);
  std::vector<double> coeffs(bias_n_coeffs(order));
  for (auto& c : coeffs) c = rng.uniform(-coeff_range, coeff_range);
  return bias_field_with_coeffs(v, order, coeffs);
}

Volume3D gamma_contrast_with(const Volume3D& v, double gamma) {
  for (float x : v.data)
    if (x < 0.0f || x > 1.0f)
      throw ArgumentError("gamma_contrast: values must be in [0,1]");
  Volume3D out = v;
  for (auto& x : out.data)
    x = static_cast<float>(std::pow(static_cast<double>(x), gamma));
  return out;
}

Volume3D gamma_contrast(const Volume3D& v, double log_gamma_range,
                        std::uint64_t seed) {
  Rng rng(seed);
  const double gamma =
      std::exp(rng.uniform(-log_gamma_range, log_gamma_range));
  return gamma_contrast_with(v, gamma);
}

Volume3D sagittal_flip(const Volume3D& v) {
  Volume3D out = v;
  const int nx = v.dims[0];
  for (int k = 0; k < v.dims[2]; ++k)
    for (int j = 0; j < v.dims[1]; ++j)
      for (int i = 0; i < nx; ++i)
        out.at(i, j, k) = v.at(nx - 1 - i, j, k);
  return out;
}

Volume3D random_scale_with(const Volume3D& v, double scale) {
  if (!(scale > 0.0)) throw ArgumentError("random_scale: scale must be > 0");
  const Eigen::Vector3d c = v.world_center();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() *= scale;
  m.topRightCorner<3, 1>() = c - scale * c;
  return resample_affine(v, m, Interp::Trilinear, 0.0f);
}

std::string AugmentRecord::to_json() const {
  nlohmann::json j;
  j["elastic_grid"] = elastic_grid;
  j["elastic_disp_mm"] = elastic_disp_mm;
  j["scale"] = scale;
  j["flipped"] = flipped;
  j["bias_order"] = bias_order;
  j["bias_coeffs"] = bias_coeffs;
  j["gamma"] = gamma;
  return j.dump();
}

AugmentRecord AugmentRecord::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  AugmentRecord r;
  r.elastic_grid = j.at("elastic_grid").get<std::array<int, 3>>();
  r.elastic_disp_mm = j.at("elastic_disp_mm").get<std::vector<double>>();
  r.scale = j.at("scale").get<double>();
  r.flipped = j.at("flipped").get<bool>();
  r.bias_order = j.at("bias_order").get<int>();
  r.bias_coeffs = j.at("bias_coeffs").get<std::vector<double>>();
  r.gamma = j.at("gamma").get<double>();
  return r;
}

Volume3D replay_pipeline(const Volume3D& v, const AugmentConfig& cfg,
                         const AugmentRecord& record,
                         const MotionTrace& trace) {
  cfg.validate();
  Volume3D cur = normalize_intensity(v, cfg.normalize_lo_pct,
                                     cfg.normalize_hi_pct);
  if (!record.elastic_disp_mm.empty())
    cur = elastic_deform_with_field(cur, record.elastic_grid,
                                    record.elastic_disp_mm);
  if (record.scale != 1.0) cur = random_scale_with(cur, record.scale);
  if (record.flipped) cur = sagittal_flip(cur);
  if (!record.bias_coeffs.empty())
    cur = bias_field_with_coeffs(cur, record.bias_order, record.bias_coeffs);
  if (record.gamma != 1.0) {
    cur = renormalize_unit(std::move(cur));
    cur = gamma_contrast_with(cur, record.gamma);
  }
  cur = crop_roi(cur, cfg.roi);
  if (cfg.enable_motion) cur = corrupt_with_motion(cur, trace);
  return renormalize_unit(std::move(cur));
}

PipelineOutput apply_pipeline(const Volume3D& v, const AugmentConfig& cfg,
                              const MotionParams& motion, std::uint64_t seed) {
  cfg.validate();
  motion.validate();

  AugmentRecord rec;
  if (cfg.enable_elastic && cfg.elastic_max_disp_mm > 0.0) {
    Rng rng(hash_combine(seed, kElastic));
    rec.elastic_grid = cfg.elastic_grid;
    const std::size_t n_ctrl = static_cast<std::size_t>(cfg.elastic_grid[0]) *
                               cfg.elastic_grid[1] * cfg.elastic_grid[2];
    rec.elastic_disp_mm.resize(3 * n_ctrl);
    for (auto& d : rec.elastic_disp_mm)
      d = rng.uniform(-cfg.elastic_max_disp_mm, cfg.elastic_max_disp_mm);
  }
  if (cfg.enable_scale) {
    Rng rng(hash_combine(seed, kScale));
    rec.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  }
  if (cfg.enable_flip) {
    Rng rng(hash_combine(seed, kFlip));
    rec.flipped = rng.bernoulli(cfg.flip_probability);
  }
  if (cfg.enable_bias) {
    Rng rng(hash_combine(seed, kBias));
    rec.bias_order = cfg.bias_order;
    rec.bias_coeffs.resize(bias_n_coeffs(cfg.bias_order));
    for (auto& c : rec.bias_coeffs)
      c = rng.uniform(-cfg.bias_coeff_range, cfg.bias_coeff_range);
  }
  if (cfg.enable_contrast) {
    Rng rng(hash_combine(seed, kContrast));
    rec.gamma = std::exp(rng.uniform(-cfg.contrast_log_gamma_range,
                                     cfg.contrast_log_gamma_range));
  }

  MotionTrace trace;
  const int extent = cfg.roi[motion.phase_axis];
  if (cfg.enable_motion) {
    trace = sample_motion_trace(motion, extent, hash_combine(seed, kMotion));
  } else {
    trace.transforms.resize(1);
    trace.segment_boundaries = {std::max(1, extent / 2), extent};
    trace.phase_axis = motion.phase_axis;
    trace.rng_seed = seed;
  }

  return PipelineOutput{replay_pipeline(v, cfg, rec, trace), std::move(trace),
                        std::move(rec)};
}

}  // namespace mqc
