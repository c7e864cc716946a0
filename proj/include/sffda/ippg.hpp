// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "sffda/preprocess.hpp"
#include "sffda/tensor.hpp"

namespace sffda::ippg {

inline constexpr double kWindowSeconds = 10.0;
inline constexpr double kHrLow = 0.75, kHrHigh = 3.33;
inline constexpr double kRrLow = 0.15, kRrHigh = 0.40;
inline constexpr std::size_t kStatCount = 4;

/// Per-channel spatial means of an ROI clip, channels R,G,B.
struct PmTrace {
  std::array<std::vector<double>, 3> channel;
  double fps = 25.0;

  std::size_t size() const { return channel[0].size(); }
};

struct Subblock {
  std::array<std::vector<double>, 3> channel;  // mean-removed
  std::array<std::vector<double>, 3> raw;
  std::size_t index = 0;

  std::size_t size() const { return channel[0].size(); }
};

inline PmTrace pixel_mean(const RoiClip& roi) {
  if (roi.kind != RoiKind::kNose && roi.kind != RoiKind::kForehead) {
    throw ConfigError("pixel_mean expects a nose or forehead ROI, got " + std::string(roi_name(roi.kind)));
  }
  if (roi.frames.empty()) throw DataError("pixel_mean: empty ROI");
  PmTrace pm;
  pm.fps = roi.fps;
  for (auto& c : pm.channel) c.reserve(roi.size());
  for (const Tensor& f : roi.frames) {
    if (f.rank() != 3 || f.dim(2) != 3) throw ShapeError("ROI frame must be [h,w,3]");
    std::array<double, 3> acc{};
    const std::size_t pixels = f.dim(0) * f.dim(1);
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t c = 0; c < 3; ++c) acc[c] += f[p * 3 + c];
    for (std::size_t c = 0; c < 3; ++c) pm.channel[c].push_back(acc[c] / static_cast<double>(pixels));
  }
  return pm;
}

inline std::size_t window_length(double fps) {
  return static_cast<std::size_t>(std::lround(kWindowSeconds * fps));
}

/// Consecutive non-overlapping 10 s windows; a trailing partial window is
/// dropped. Requires at least two windows.
inline std::vector<Subblock> subblocks(const PmTrace& pm) {
  const std::size_t len = window_length(pm.fps);
  if (len < 2 || pm.size() < 2 * len) {
    throw DataError("iPPG needs at least 20 s of frames (" + std::to_string(2 * len) + "), got " +
                    std::to_string(pm.size()));
  }
  std::vector<Subblock> out(pm.size() / len);
  for (std::size_t k = 0; k < out.size(); ++k) {
    Subblock& sb = out[k];
    sb.index = k;
    for (std::size_t c = 0; c < 3; ++c) {
      const auto begin = pm.channel[c].begin() + static_cast<std::ptrdiff_t>(k * len);
      sb.raw[c].assign(begin, begin + static_cast<std::ptrdiff_t>(len));
      double mean = 0.0;
      for (double v : sb.raw[c]) mean += v;
      mean /= static_cast<double>(len);
      sb.channel[c].resize(len);
      for (std::size_t i = 0; i < len; ++i) sb.channel[c][i] = sb.raw[c][i] - mean;
    }
  }
  return out;
}

/// Direct DFT X_j = sum_n x_n exp(-2 pi i j n / N) for j in [0, N).
inline std::vector<std::complex<double>> dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce j*t mod n first so the angle stays accurate for long windows.
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((j * t) % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[j] = acc;
  }
  return out;
}

/// DFT bins whose frequency j*fps/N lies in [lo, hi] (inclusive).
inline std::vector<std::size_t> band_bins(std::size_t n, double fps, double lo, double hi) {
  std::vector<std::size_t> bins;
  const double tol = 1e-9;
  for (std::size_t j = 0; j <= n / 2; ++j) {
    const double f = static_cast<double>(j) * fps / static_cast<double>(n);
    if (f >= lo - tol && f <= hi + tol) bins.push_back(j);
  }
  return bins;
}

struct BandMagnitudes {
  std::vector<double> hr;
  std::vector<double> rr;
};

inline BandMagnitudes band_features(const std::vector<double>& x, double fps) {
  if (x.size() < 2) throw DataError("band_features needs at least 2 samples");
  const auto X = dft(x);
  BandMagnitudes out;
  for (std::size_t j : band_bins(x.size(), fps, kHrLow, kHrHigh)) out.hr.push_back(std::abs(X[j]));
  for (std::size_t j : band_bins(x.size(), fps, kRrLow, kRrHigh)) out.rr.push_back(std::abs(X[j]));
  return out;
}

/// mean, population std, min, max.
inline std::array<double, kStatCount> window_stats(const std::vector<double>& x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return {mean, std::sqrt(var), *lo, *hi};
}

inline std::size_t feature_width(double fps) {
  const std::size_t n = window_length(fps);
  const std::size_t per_channel =
      band_bins(n, fps, kHrLow, kHrHigh).size() + band_bins(n, fps, kRrLow, kRrHigh).size() + kStatCount;
  return per_channel * 3 * 2;
}

/// [K, D] feature sequence, row k = [nose | forehead] x [R|G|B] x
/// [HR bins | RR bins | mean std min max] for subblock k.
inline Tensor assemble_ippg(const PmTrace& nose, const PmTrace& forehead) {
  if (nose.fps != forehead.fps) throw ShapeError("nose and forehead traces differ in fps");
  const auto sn = subblocks(nose);
  const auto sf = subblocks(forehead);
  if (sn.size() != sf.size()) {
    throw ShapeError("nose has " + std::to_string(sn.size()) + " subblocks, forehead has " +
                     std::to_string(sf.size()));
  }
  const std::size_t D = feature_width(nose.fps);
  Tensor out(Shape{sn.size(), D});
  for (std::size_t k = 0; k < sn.size(); ++k) {
    std::size_t col = 0;
    for (const auto* blocks : {&sn, &sf}) {
      const Subblock& sb = (*blocks)[k];
      for (std::size_t c = 0; c < 3; ++c) {
        const auto bands = band_features(sb.channel[c], nose.fps);
        for (double v : bands.hr) out[k * D + col++] = v;
        for (double v : bands.rr) out[k * D + col++] = v;
        for (double v : window_stats(sb.raw[c])) out[k * D + col++] = v;
      }
    }
  }
  return out;
}

}  // namespace sffda::ippg
