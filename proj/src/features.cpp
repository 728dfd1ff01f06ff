#include <algorithm>
#include <cmath>

#include "mqc/kspace.hpp"
#include "mqc/probe.hpp"

namespace mqc {

int feature_count() { return 8; }

std::vector<std::string> feature_names() {
  return {"hf_ratio_x", "hf_ratio_y",   "hf_ratio_z", "grad_mean",
          "grad_std",   "entropy",      "tenengrad",  "ghost_score"};
}

std::vector<double> extract_features(const Volume3D& v, int phase_axis) {
  v.check_invariants();
  if (phase_axis < 0 || phase_axis > 2)
    throw ArgumentError("extract_features: bad phase_axis");

  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  const std::size_t n = v.size();
  std::vector<double> f(feature_count(), 0.0);

  // --- spectral features: per-axis high-frequency energy ratios.
  // |FFT| only, so they are invariant to whole-voxel translation and to
  // the sagittal flip.
  {
    std::vector<Complex> spec(n);
    for (std::size_t i = 0; i < n; ++i) spec[i] = v.data[i];
    fft3(spec, v.dims);
    double total = 0.0, hf[3] = {0.0, 0.0, 0.0};
    std::size_t idx = 0;
    for (int k = 0; k < nz; ++k) {
      const bool hk = std::min(k, nz - k) > nz / 4;
      for (int j = 0; j < ny; ++j) {
        const bool hj = std::min(j, ny - j) > ny / 4;
        for (int i = 0; i < nx; ++i, ++idx) {
          const bool hi = std::min(i, nx - i) > nx / 4;
          const double e = std::norm(spec[idx]);
          total += e;
          if (hi) hf[0] += e;
          if (hj) hf[1] += e;
          if (hk) hf[2] += e;
        }
      }
    }
    if (total > 0.0)
      for (int a = 0; a < 3; ++a) f[a] = hf[a] / total;
  }

  // --- gradient statistics + focus measure (central differences)
  {
    double sum = 0.0, sum_sq = 0.0, ten = 0.0;
    std::size_t count = 0;
    for (int k = 1; k + 1 < nz; ++k)
      for (int j = 1; j + 1 < ny; ++j)
        for (int i = 1; i + 1 < nx; ++i) {
          const double gx = 0.5 * (v.at(i + 1, j, k) - v.at(i - 1, j, k));
          const double gy = 0.5 * (v.at(i, j + 1, k) - v.at(i, j - 1, k));
          const double gz = 0.5 * (v.at(i, j, k + 1) - v.at(i, j, k - 1));
          const double g2 = gx * gx + gy * gy + gz * gz;
          const double g = std::sqrt(g2);
          sum += g;
          sum_sq += g2;
          ten += g2;
          ++count;
        }
    if (count > 0) {
      const double mean = sum / count;
      f[3] = mean;
      f[4] = std::sqrt(std::max(0.0, sum_sq / count - mean * mean));
      f[6] = ten / count;
    }
  }

  // --- intensity entropy over a fixed 64-bin histogram of [0,1]
  {
    constexpr int kBins = 64;
    std::vector<double> hist(kBins, 0.0);
    for (float x : v.data) {
      int b = static_cast<int>(x * kBins);
      b = std::clamp(b, 0, kBins - 1);
      hist[b] += 1.0;
    }
    double h = 0.0;
    for (double c : hist) {
      if (c <= 0.0) continue;
      const double p = c / static_cast<double>(n);
      h -= p * std::log(p);
    }
    f[5] = h;
  }

  // --- ghost score: long-range autocorrelation of the mean profile along
  // the phase axis. Ghost replicas put mass at large lags where a compact
  // anatomy profile has none.
  {
    const int extent = v.dims[phase_axis];
    std::vector<double> profile(extent, 0.0);
    std::size_t idx = 0;
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i, ++idx) {
          const int pos = (phase_axis == 0) ? i : (phase_axis == 1) ? j : k;
          profile[pos] += v.data[idx];
        }
    const double slab = static_cast<double>(n) / extent;
    double mean = 0.0;
    for (auto& p : profile) {
      p /= slab;
      mean += p;
    }
    mean /= extent;
    double denom = 0.0;
    for (auto& p : profile) {
      p -= mean;
      denom += p * p;
    }
    if (denom > 0.0) {
      const int lag_lo = std::max(1, extent / 4);
      const int lag_hi = extent / 2;
      double acc = 0.0;
      int n_lags = 0;
      for (int lag = lag_lo; lag < lag_hi; ++lag) {
        double r = 0.0;
        for (int j = 0; j + lag < extent; ++j) r += profile[j] * profile[j + lag];
        acc += std::abs(r / denom);
        ++n_lags;
      }
      if (n_lags > 0) f[7] = acc / n_lags;
    }
  }

  for (double x : f)
    if (!std::isfinite(x))
      throw std::runtime_error("extract_features: non-finite feature");
  return f;
}

}  // namespace mqc
