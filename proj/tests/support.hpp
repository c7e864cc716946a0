// SPDX-License-Identifier: Apache-2.0
// Shared fixtures and independent oracles for the test suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sffda/sffda.hpp"

namespace testing_support {

using namespace sffda;

/// T=4, 8x8 clips, half-width layers.
inline NetworkConfig mini_config(std::vector<Stream> streams = {kAllStreams.begin(), kAllStreams.end()}) {
  NetworkConfig c;
  c.streams = std::move(streams);
  c.frames = 4;
  c.side = 8;
  c.widths = {4, 8, 16, 16, 32};
  c.attention_channels = 2;
  c.hidden = 32;
  c.fusion_hidden = 32;
  return c;
}

/// Desk-scale training configuration on real 40x40 clips.
inline NetworkConfig compact_config(std::vector<Stream> streams = {kAllStreams.begin(), kAllStreams.end()}) {
  NetworkConfig c = mini_config(std::move(streams));
  c.side = kRoiSide;
  return c;
}

inline Features random_features(const NetworkConfig& c, std::mt19937_64& rng, std::size_t ippg_rows = 2) {
  Features f;
  for (Stream s : c.streams) {
    switch (s) {
      case Stream::kLocation: f[s] = Tensor::uniform({c.frames, c.location_dim}, 0.0, 1.0, rng); break;
      case Stream::kEyes:
      case Stream::kMouth: f[s] = Tensor::uniform({3, c.frames, c.side, c.side}, 0.0, 1.0, rng); break;
      case Stream::kIppg: f[s] = Tensor::uniform({ippg_rows, c.ippg_dim}, -1.0, 1.0, rng); break;
    }
  }
  return f;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;  // entries whose step interval crossed a ReLU/max switch
  std::string worst;
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kKinkStep = 1e-7;
inline constexpr double kRelFloor = 1e-5;
inline constexpr double kGradTol = 1e-4;

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kRelFloor});
}

/// Compares reverse-mode gradients of the scalar `loss()` against central
/// differences for every leaf. `per_leaf` entries are sampled per leaf
/// (0 = all entries). An entry that misses at kFdStep is measured again at
/// kKinkStep; agreement there means a piecewise-linear switch lies within
/// kFdStep of the point, and the entry is counted in `kinks` instead.
inline GradCheck grad_check(const std::function<ad::Var()>& loss, const std::vector<std::pair<std::string, ad::Var>>& leaves,
                            std::size_t per_leaf, std::mt19937_64& rng) {
  for (const auto& [_, v] : leaves) v.node()->zero_grad();
  ad::backward(loss());
  std::vector<Tensor> analytic;
  for (const auto& [_, v] : leaves) analytic.push_back(v.grad());
  GradCheck out;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor& value = leaves[l].second.node()->value;
    std::vector<std::size_t> idx(value.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (per_leaf && per_leaf < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_leaf);
    }
    for (std::size_t i : idx) {
      const double orig = value[i];
      auto central = [&](double h) {
        value[i] = orig + h;
        const double up = loss().value()[0];
        value[i] = orig - h;
        const double down = loss().value()[0];
        value[i] = orig;
        return (up - down) / (2.0 * h);
      };
      double numeric = central(kFdStep);
      double err = rel_error(analytic[l][i], numeric);
      if (err > kGradTol) {
        const double fine = central(kKinkStep);
        if (rel_error(analytic[l][i], fine) <= kGradTol) {
          ++out.kinks;
          numeric = fine;
          err = rel_error(analytic[l][i], fine);
        }
      }
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = leaves[l].first + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[l][i]) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Every parameter of a network as a named leaf.
inline std::vector<std::pair<std::string, ad::Var>> param_leaves(const Network& net) {
  std::vector<std::pair<std::string, ad::Var>> out;
  for (const auto& e : net.params().entries()) out.emplace_back(e.name, e.var);
  return out;
}

/// Zero-initialized biases can leave a ReLU input at exactly 0, where a
/// central difference sees half the slope. Small random biases move every
/// unit off that kink.
inline void jitter_biases(Network& net, std::mt19937_64& rng, double scale = 0.1) {
  for (const auto& e : net.params().entries()) {
    if (e.name.size() > 2 && e.name.ends_with(".b")) {
      net.params().assign(e.name, Tensor::uniform(e.var.value().shape(), -scale, scale, rng));
    }
  }
}

/// Direct seven-loop 3D convolution with zero padding.
inline Tensor naive_conv3d(const Tensor& x, const Tensor& k, const Tensor& b, Triple pad) {
  const std::size_t C = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), kt = k.dim(2), kh = k.dim(3), kw = k.dim(4);
  const std::size_t ot = T + 2 * pad.t - kt + 1, oh = H + 2 * pad.h - kh + 1, ow = W + 2 * pad.w - kw + 1;
  Tensor y(Shape{O, ot, oh, ow});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t t = 0; t < ot; ++t)
      for (std::size_t h = 0; h < oh; ++h)
        for (std::size_t w = 0; w < ow; ++w) {
          double acc = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t a = 0; a < kt; ++a)
              for (std::size_t d = 0; d < kh; ++d)
                for (std::size_t e = 0; e < kw; ++e) {
                  const long it = static_cast<long>(t + a) - static_cast<long>(pad.t);
                  const long ih = static_cast<long>(h + d) - static_cast<long>(pad.h);
                  const long iw = static_cast<long>(w + e) - static_cast<long>(pad.w);
                  if (it < 0 || ih < 0 || iw < 0 || it >= static_cast<long>(T) || ih >= static_cast<long>(H) ||
                      iw >= static_cast<long>(W))
                    continue;
                  acc += x.at({c, static_cast<std::size_t>(it), static_cast<std::size_t>(ih), static_cast<std::size_t>(iw)}) *
                         k.at({o, c, a, d, e});
                }
          y.at({o, t, h, w}) = acc;
        }
  return y;
}

/// Bilinear sample of channel c at continuous source coordinates (pixel centers at integer + 0.5).
inline double bilinear_at(const Tensor& img, double sy, double sx, std::size_t c) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  const double fy = std::clamp(sy - 0.5, 0.0, static_cast<double>(h - 1));
  const double fx = std::clamp(sx - 0.5, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(fy));
  const auto x0 = static_cast<std::size_t>(std::floor(fx));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double ty = fy - static_cast<double>(y0), tx = fx - static_cast<double>(x0);
  return (1 - ty) * ((1 - tx) * img.at({y0, x0, c}) + tx * img.at({y0, x1, c})) +
         ty * ((1 - tx) * img.at({y1, x0, c}) + tx * img.at({y1, x1, c}));
}

/// Reference resize: output pixel (i,j) samples the source at the mapped
/// pixel-center position.
inline Tensor reference_resize(const Tensor& img, std::size_t oh, std::size_t ow) {
  Tensor out(Shape{oh, ow, img.dim(2)});
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t c = 0; c < img.dim(2); ++c) {
        const double sy = (i + 0.5) * static_cast<double>(img.dim(0)) / static_cast<double>(oh);
        const double sx = (j + 0.5) * static_cast<double>(img.dim(1)) / static_cast<double>(ow);
        out.at({i, j, c}) = bilinear_at(img, sy, sx, c);
      }
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sffda_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// A valid 468-point frame with every point at (x, y, z).
inline std::vector<Point3> flat_frame(double x = 0.5, double y = 0.5, double z = 0.0) {
  return std::vector<Point3>(kLandmarkCount, Point3{x, y, z});
}

}  // namespace testing_support
