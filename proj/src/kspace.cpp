#include "mqc/kspace.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>
#include <nlohmann/json.hpp>

#include "mqc/rng.hpp"

namespace mqc {
namespace {

// FFTW planning is not thread-safe; execution of a cached plan is.
std::mutex g_plan_mutex;

struct PlanKey {
  int nx, ny, nz, sign;
  bool operator<(const PlanKey& o) const {
    return std::tie(nx, ny, nz, sign) < std::tie(o.nx, o.ny, o.nz, o.sign);
  }
};

fftw_plan get_plan(std::array<int, 3> dims, int sign) {
  thread_local std::map<PlanKey, fftw_plan> cache;
  const PlanKey key{dims[0], dims[1], dims[2], sign};
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  std::lock_guard<std::mutex> lock(g_plan_mutex);
  // x is the fastest-varying index in our layout, so it is FFTW's last dim.
  std::vector<Complex> dummy(static_cast<std::size_t>(dims[0]) * dims[1] *
                             dims[2]);
  auto* buf = reinterpret_cast<fftw_complex*>(dummy.data());
  fftw_plan p = fftw_plan_dft_3d(dims[2], dims[1], dims[0], buf, buf, sign,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  cache.emplace(key, p);
  return p;
}

void run_fft(std::vector<Complex>& data, std::array<int, 3> dims, int sign) {
  const std::size_t n =
      static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (data.size() != n) throw ArgumentError("fft3: data/dims mismatch");
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(get_plan(dims, sign), buf, buf);
}

}  // namespace

void fft3(std::vector<Complex>& data, std::array<int, 3> dims) {
  run_fft(data, dims, FFTW_FORWARD);
}

void ifft3(std::vector<Complex>& data, std::array<int, 3> dims) {
  run_fft(data, dims, FFTW_BACKWARD);
  const double scale =
      1.0 / (static_cast<double>(dims[0]) * dims[1] * dims[2]);
  for (auto& c : data) c *= scale;
}

void MotionParams::validate() const {
  if (rotation_range_deg < 0.0 || translation_range_mm < 0.0)
    throw ArgumentError("MotionParams: ranges must be nonnegative");
  if (n_transforms_min < 1 || n_transforms_max < n_transforms_min)
    throw ArgumentError("MotionParams: bad n_transforms range");
  if (phase_axis < 0 || phase_axis > 2)
    throw ArgumentError("MotionParams: phase_axis out of range");
}

void MotionTrace::validate(int extent) const {
  const int n = n_transforms();
  if (n < 1) throw ArgumentError("MotionTrace: need at least one transform");
  if (static_cast<int>(segment_boundaries.size()) != n + 1)
    throw ArgumentError("MotionTrace: expected N+1 boundaries");
  int prev = 0;
  for (int b : segment_boundaries) {
    if (b <= prev) throw ArgumentError("MotionTrace: boundaries not increasing");
    prev = b;
  }
  if (segment_boundaries.back() != extent)
    throw ArgumentError("MotionTrace: last boundary must equal the extent");
  if (phase_axis < 0 || phase_axis > 2)
    throw ArgumentError("MotionTrace: bad phase_axis");
}

MotionTrace sample_motion_trace(const MotionParams& params, int extent,
                                std::uint64_t seed) {
  params.validate();
  Rng rng(seed);

  const int n = static_cast<int>(
      rng.uniform_int(params.n_transforms_min, params.n_transforms_max));
  if (extent < n + 1)
    throw ArgumentError("sample_motion_trace: extent too small for N=" +
                        std::to_string(n));

  MotionTrace trace;
  trace.rng_seed = seed;
  trace.phase_axis = params.random_phase_axis
                         ? static_cast<int>(rng.uniform_int(0, 2))
                         : params.phase_axis;

  trace.transforms.resize(n);
  for (auto& t : trace.transforms) {
    for (int a = 0; a < 3; ++a)
      t.rot_deg[a] =
          rng.uniform(-params.rotation_range_deg, params.rotation_range_deg);
    for (int a = 0; a < 3; ++a)
      t.trans_mm[a] = rng.uniform(-params.translation_range_mm,
                                  params.translation_range_mm);
  }

  // n distinct cut points in [1, extent-1], sorted, then the extent cap.
  std::vector<int> cuts;
  cuts.reserve(n);
  while (static_cast<int>(cuts.size()) < n) {
    const int c = static_cast<int>(rng.uniform_int(1, extent - 1));
    if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(extent);
  trace.segment_boundaries = std::move(cuts);
  return trace;
}

Volume3D corrupt_with_motion(const Volume3D& v, const MotionTrace& trace) {
  const int extent = v.dims[trace.phase_axis];
  trace.validate(extent);
  for (float x : v.data)
    if (!std::isfinite(x))
      throw ArgumentError("corrupt_with_motion: non-finite input");

  const std::size_t n = v.size();
  std::vector<Complex> composite(n);
  for (std::size_t i = 0; i < n; ++i) composite[i] = v.data[i];
  fft3(composite, v.dims);

  // Copy acquisition lines [lo, hi) along the phase axis from src into the
  // composite. Lines are numbered in acquisition order: a linear phase-encode
  // sweep from -k_max to +k_max, so acquisition index a lives at storage
  // (unshifted DFT) index (a + extent/2) % extent and DC is acquired
  // mid-scan.
  auto copy_slab = [&](const std::vector<Complex>& src, int lo, int hi) {
    const int nx = v.dims[0], ny = v.dims[1];
    const int half = extent / 2;
    for (int a = lo; a < hi; ++a) {
      const int s = (a + half) % extent;
      if (trace.phase_axis == 0) {
        for (int k = 0; k < v.dims[2]; ++k)
          for (int j = 0; j < ny; ++j) {
            const std::size_t idx = v.index(s, j, k);
            composite[idx] = src[idx];
          }
      } else if (trace.phase_axis == 1) {
        for (int k = 0; k < v.dims[2]; ++k) {
          const std::size_t base = v.index(0, s, k);
          std::copy(src.begin() + base, src.begin() + base + nx,
                    composite.begin() + base);
        }
      } else {
        const std::size_t plane = static_cast<std::size_t>(nx) * ny;
        std::copy(src.begin() + s * plane, src.begin() + (s + 1) * plane,
                  composite.begin() + s * plane);
      }
    }
  };

  std::vector<Complex> scratch(n);
  for (int seg = 1; seg <= trace.n_transforms(); ++seg) {
    const int lo = trace.segment_boundaries[seg - 1];
    const int hi = trace.segment_boundaries[seg];
    const RigidTransform& t = trace.transforms[seg - 1];
    if (t.is_identity()) continue;  // slab would be identical to the reference
    const Volume3D moved = resample_affine(v, t, Interp::Trilinear, 0.0f);
    for (std::size_t i = 0; i < n; ++i) scratch[i] = moved.data[i];
    fft3(scratch, v.dims);
    copy_slab(scratch, lo, hi);
  }

  ifft3(composite, v.dims);
  Volume3D out = v;
  for (std::size_t i = 0; i < n; ++i)
    out.data[i] = static_cast<float>(std::abs(composite[i]));
  return out;
}

std::string motion_trace_to_json(const MotionTrace& trace, double rms_score) {
  nlohmann::json j;
  j["seed"] = trace.rng_seed;
  j["phase_axis"] = trace.phase_axis;
  j["boundaries"] = trace.segment_boundaries;
  auto& ts = j["transforms"] = nlohmann::json::array();
  for (const auto& t : trace.transforms) {
    ts.push_back({{"rot_deg", {t.rot_deg[0], t.rot_deg[1], t.rot_deg[2]}},
                  {"trans_mm", {t.trans_mm[0], t.trans_mm[1], t.trans_mm[2]}}});
  }
  j["rms_score"] = rms_score;
  return j.dump(2);
}

MotionTrace motion_trace_from_json(const std::string& json_text,
                                   double* rms_score_out) {
  const auto j = nlohmann::json::parse(json_text);
  MotionTrace trace;
  trace.rng_seed = j.at("seed").get<std::uint64_t>();
  trace.phase_axis = j.at("phase_axis").get<int>();
  trace.segment_boundaries = j.at("boundaries").get<std::vector<int>>();
  for (const auto& jt : j.at("transforms")) {
    RigidTransform t;
    for (int a = 0; a < 3; ++a) {
      t.rot_deg[a] = jt.at("rot_deg")[a].get<double>();
      t.trans_mm[a] = jt.at("trans_mm")[a].get<double>();
    }
    trace.transforms.push_back(t);
  }
  if (rms_score_out) *rms_score_out = j.at("rms_score").get<double>();
  return trace;
}

}  // namespace mqc
