// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "sffda/tensor.hpp"

// Raw forward/backward kernels for the volumetric layers. These operate on
// plain tensors; the autodiff layer wraps them into graph nodes.
namespace sffda {

/// Extents along (time, height, width).
struct Triple {
  std::size_t t = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
};

enum class PoolMode { kMax, kMean };

namespace kernels {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

struct ConvGeometry {
  std::size_t channels, frames, height, width;
  std::size_t out_channels, kt, kh, kw;
  Triple pad;
  std::size_t out_t, out_h, out_w;

  std::size_t patch() const { return channels * kt * kh * kw; }
  std::size_t positions() const { return out_t * out_h * out_w; }
};

inline ConvGeometry conv3d_geometry(const Shape& input, const Shape& kernel,
                                    const Shape& bias, Triple pad) {
  if (input.size() != 4) {
    throw ShapeError("conv3d: input must be [C,T,H,W], got " + shape_str(input));
  }
  if (kernel.size() != 5) {
    throw ShapeError("conv3d: kernel must be [Cout,C,kt,kh,kw], got " + shape_str(kernel));
  }
  if (kernel[1] != input[0]) {
    throw ShapeError("conv3d: kernel expects " + std::to_string(kernel[1]) +
                     " input channels, input has " + std::to_string(input[0]));
  }
  if (bias.size() != 1 || bias[0] != kernel[0]) {
    throw ShapeError("conv3d: bias must be [" + std::to_string(kernel[0]) + "], got " +
                     shape_str(bias));
  }
  ConvGeometry g{input[0], input[1], input[2], input[3], kernel[0], kernel[2],
                 kernel[3], kernel[4], pad, 0, 0, 0};
  const std::size_t pt = input[1] + 2 * pad.t;
  const std::size_t ph = input[2] + 2 * pad.h;
  const std::size_t pw = input[3] + 2 * pad.w;
  if (g.kt > pt || g.kh > ph || g.kw > pw) {
    throw ShapeError("conv3d: kernel " + shape_str(kernel) + " exceeds padded input " +
                     shape_str({input[0], pt, ph, pw}));
  }
  g.out_t = pt - g.kt + 1;
  g.out_h = ph - g.kh + 1;
  g.out_w = pw - g.kw + 1;
  return g;
}

/// Output columns [lo, hi) whose input column ow + d - pad lies inside [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t d,
                                                       std::size_t pad, std::size_t extent) {
  const std::size_t lo = pad > d ? std::min(out, pad - d) : 0;
  const std::size_t hi = std::min(out, extent + pad > d ? extent + pad - d : 0);
  return {lo, std::max(lo, hi)};
}

/// Unfolds every receptive field into a column: result is [patch, positions].
inline void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t npos = g.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t dt = 0; dt < g.kt; ++dt) {
      const auto [t0, t1] = valid_range(g.out_t, dt, g.pad.t, g.frames);
      for (std::size_t dh = 0; dh < g.kh; ++dh) {
        const auto [h0, h1] = valid_range(g.out_h, dh, g.pad.h, g.height);
        for (std::size_t dw = 0; dw < g.kw; ++dw, ++row) {
          const auto [w0, w1] = valid_range(g.out_w, dw, g.pad.w, g.width);
          double* out = cols + row * npos;
          std::fill(out, out + npos, 0.0);
          for (std::size_t ot = t0; ot < t1; ++ot) {
            const std::size_t it = ot + dt - g.pad.t;
            for (std::size_t oh = h0; oh < h1; ++oh) {
              const std::size_t ih = oh + dh - g.pad.h;
              const double* src = x + ((c * g.frames + it) * g.height + ih) * g.width + (w0 + dw - g.pad.w);
              double* dst = out + (ot * g.out_h + oh) * g.out_w;
              std::copy(src, src + (w1 - w0), dst + w0);
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters columns back, accumulating into dx.
inline void col2im(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t npos = g.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t dt = 0; dt < g.kt; ++dt) {
      const auto [t0, t1] = valid_range(g.out_t, dt, g.pad.t, g.frames);
      for (std::size_t dh = 0; dh < g.kh; ++dh) {
        const auto [h0, h1] = valid_range(g.out_h, dh, g.pad.h, g.height);
        for (std::size_t dw = 0; dw < g.kw; ++dw, ++row) {
          const auto [w0, w1] = valid_range(g.out_w, dw, g.pad.w, g.width);
          const double* in = cols + row * npos;
          for (std::size_t ot = t0; ot < t1; ++ot) {
            const std::size_t it = ot + dt - g.pad.t;
            for (std::size_t oh = h0; oh < h1; ++oh) {
              const std::size_t ih = oh + dh - g.pad.h;
              const double* src = in + (ot * g.out_h + oh) * g.out_w;
              double* dst = dx + ((c * g.frames + it) * g.height + ih) * g.width + (w0 + dw - g.pad.w);
              for (std::size_t ow = w0; ow < w1; ++ow) dst[ow - w0] += src[ow];
            }
          }
        }
      }
    }
  }
}

inline Tensor conv3d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                             Triple pad) {
  const ConvGeometry g = conv3d_geometry(x.shape(), kernel.shape(), bias.shape(), pad);
  std::vector<double> cols(g.patch() * g.positions());
  im2col(x.data().data(), g, cols.data());
  Tensor y(Shape{g.out_channels, g.out_t, g.out_h, g.out_w});
  ConstMatrixMap k(kernel.data().data(), static_cast<Eigen::Index>(g.out_channels),
                   static_cast<Eigen::Index>(g.patch()));
  ConstMatrixMap c(cols.data(), static_cast<Eigen::Index>(g.patch()),
                   static_cast<Eigen::Index>(g.positions()));
  MatrixMap out(y.data().data(), static_cast<Eigen::Index>(g.out_channels),
                static_cast<Eigen::Index>(g.positions()));
  out.noalias() = k * c;
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    out.row(static_cast<Eigen::Index>(o)).array() += bias[o];
  }
  return y;
}

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};

/// Gradients of conv3d for upstream gradient `dy`. Only the requested parts
/// are computed; the others are left empty.
inline ConvGrads conv3d_backward(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                                 Triple pad, const Tensor& dy, bool want_input,
                                 bool want_params) {
  const ConvGeometry g = conv3d_geometry(x.shape(), kernel.shape(), bias.shape(), pad);
  const auto rows = static_cast<Eigen::Index>(g.patch());
  const auto npos = static_cast<Eigen::Index>(g.positions());
  const auto cout = static_cast<Eigen::Index>(g.out_channels);
  ConstMatrixMap dout(dy.data().data(), cout, npos);
  ConvGrads grads;
  if (want_params) {
    std::vector<double> cols(g.patch() * g.positions());
    im2col(x.data().data(), g, cols.data());
    ConstMatrixMap c(cols.data(), rows, npos);
    grads.kernel = Tensor(kernel.shape());
    MatrixMap dk(grads.kernel.data().data(), cout, rows);
    dk.noalias() = dout * c.transpose();
    grads.bias = Tensor(bias.shape());
    for (Eigen::Index o = 0; o < cout; ++o) {
      grads.bias[static_cast<std::size_t>(o)] = dout.row(o).sum();
    }
  }
  if (want_input) {
    ConstMatrixMap k(kernel.data().data(), cout, rows);
    RowMatrix dcols(rows, npos);
    dcols.noalias() = k.transpose() * dout;
    grads.input = Tensor(x.shape());
    col2im(dcols.data(), g, grads.input.data().data());
  }
  return grads;
}

inline Shape pool3d_shape(const Shape& input, Triple window) {
  if (input.size() != 4) {
    throw ShapeError("pool3d: input must be [C,T,H,W], got " + shape_str(input));
  }
  if (window.t == 0 || window.h == 0 || window.w == 0 || input[1] % window.t != 0 ||
      input[2] % window.h != 0 || input[3] % window.w != 0) {
    throw ShapeError("pool3d: window (" + std::to_string(window.t) + "," +
                     std::to_string(window.h) + "," + std::to_string(window.w) +
                     ") does not divide extents " + shape_str(input));
  }
  return {input[0], input[1] / window.t, input[2] / window.h, input[3] / window.w};
}

/// Non-overlapping pooling. For max mode, `argmax` receives the flat input
/// index selected for every output element (first maximum in scan order).
inline Tensor pool3d_forward(const Tensor& x, Triple window, PoolMode mode,
                             std::vector<std::size_t>* argmax = nullptr) {
  const Shape out_shape = pool3d_shape(x.shape(), window);
  Tensor y(out_shape);
  if (argmax) argmax->assign(y.size(), 0);
  const std::size_t T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const double inv = 1.0 / static_cast<double>(window.t * window.h * window.w);
  std::size_t o = 0;
  for (std::size_t c = 0; c < out_shape[0]; ++c) {
    for (std::size_t t = 0; t < out_shape[1]; ++t) {
      for (std::size_t h = 0; h < out_shape[2]; ++h) {
        for (std::size_t w = 0; w < out_shape[3]; ++w, ++o) {
          std::size_t best = ((c * T + t * window.t) * H + h * window.h) * W + w * window.w;
          double acc = mode == PoolMode::kMax ? x[best] : 0.0;
          for (std::size_t dt = 0; dt < window.t; ++dt) {
            for (std::size_t dh = 0; dh < window.h; ++dh) {
              for (std::size_t dw = 0; dw < window.w; ++dw) {
                const std::size_t i =
                    ((c * T + t * window.t + dt) * H + h * window.h + dh) * W + w * window.w + dw;
                if (mode == PoolMode::kMax) {
                  if (x[i] > acc) {
                    acc = x[i];
                    best = i;
                  }
                } else {
                  acc += x[i];
                }
              }
            }
          }
          if (mode == PoolMode::kMax) {
            y[o] = acc;
            if (argmax) (*argmax)[o] = best;
          } else {
            y[o] = acc * inv;
          }
        }
      }
    }
  }
  return y;
}

}  // namespace kernels
}  // namespace sffda
