// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sffda/landmarks.hpp"
#include "sffda/tensor.hpp"

namespace sffda {

inline constexpr std::size_t kRoiSide = 40;
inline constexpr double kRoiPadding = 0.25;
inline constexpr std::size_t kDefaultFrames = 64;

/// Video frames [M,H,W,3] with values in [0,1].
struct FrameClip {
  Tensor frames;
  double fps = 25.0;

  std::size_t size() const { return frames.dim(0); }
  std::size_t height() const { return frames.dim(1); }
  std::size_t width() const { return frames.dim(2); }
};

/// Per-frame crops of one region. Eyes/mouth frames are kRoiSide x kRoiSide;
/// nose/forehead frames keep their crop resolution. Every frame is [h,w,3].
struct RoiClip {
  RoiKind kind = RoiKind::kEyes;
  double fps = 25.0;
  std::vector<Tensor> frames;
  std::vector<bool> valid;

  std::size_t size() const { return frames.size(); }

  /// [T,h,w,3]; requires equal frame sizes.
  Tensor stacked() const {
    if (frames.empty()) throw DataError("empty ROI clip");
    Shape s{frames.size()};
    s.insert(s.end(), frames.front().shape().begin(), frames.front().shape().end());
    Tensor out(s);
    const std::size_t per = frames.front().size();
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (!frames[i].same_shape(frames.front())) throw ShapeError("ROI frames differ in size");
      std::copy(frames[i].data().begin(), frames[i].data().end(),
                out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
  }
};

/// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct PixelBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  std::size_t width() const { return x1 - x0; }
  std::size_t height() const { return y1 - y0; }
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

/// Bounding box of the ROI landmarks in one frame, grown by `padding` of
/// its size on every side and clamped to the image. Empty result when the
/// landmarks are degenerate.
inline std::optional<PixelBox> roi_box(std::span<const Point3> points, RoiKind kind,
                                       std::size_t width, std::size_t height,
                                       double padding = kRoiPadding) {
  double xmin = std::numeric_limits<double>::infinity(), ymin = xmin;
  double xmax = -xmin, ymax = -xmin;
  for (std::size_t idx : roi_indices(kind)) {
    const double x = points[idx].x * static_cast<double>(width);
    const double y = points[idx].y * static_cast<double>(height);
    if (!std::isfinite(x) || !std::isfinite(y)) return std::nullopt;
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  const double bw = xmax - xmin;
  const double bh = ymax - ymin;
  if (!(bw > 0.0) || !(bh > 0.0)) return std::nullopt;
  const auto clamp_to = [](double v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(hi)));
  };
  PixelBox box;
  box.x0 = clamp_to(std::floor(xmin - padding * bw), width);
  box.x1 = clamp_to(std::ceil(xmax + padding * bw), width);
  box.y0 = clamp_to(std::floor(ymin - padding * bh), height);
  box.y1 = clamp_to(std::ceil(ymax + padding * bh), height);
  if (box.x1 <= box.x0 || box.y1 <= box.y0) return std::nullopt;
  return box;
}

/// Copies frame `m` of the clip inside `box` into a [h,w,3] tensor.
inline Tensor crop_frame(const FrameClip& clip, std::size_t m, const PixelBox& box) {
  const std::size_t W = clip.width(), H = clip.height();
  if (box.x1 > W || box.y1 > H) throw ShapeError("crop box exceeds frame");
  Tensor out(Shape{box.height(), box.width(), 3});
  const double* src = clip.frames.data().data() + m * H * W * 3;
  for (std::size_t y = 0; y < box.height(); ++y) {
    const double* row = src + ((box.y0 + y) * W + box.x0) * 3;
    std::copy(row, row + box.width() * 3, out.data().begin() + static_cast<std::ptrdiff_t>(y * box.width() * 3));
  }
  return out;
}

/// Bilinear resampling of an [h,w,C] image with pixel-center alignment
/// (source coordinate = (dst + 0.5) * scale - 0.5, clamped at the edges).
inline Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw ShapeError("resize_bilinear: expected [h,w,C], got " + shape_str(img.shape()));
  const std::size_t h = img.dim(0), w = img.dim(1), C = img.dim(2);
  Tensor out(Shape{out_h, out_w, C});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const double a = img[(y0 * w + x0) * C + c];
        const double b = img[(y0 * w + x1) * C + c];
        const double d = img[(y1 * w + x0) * C + c];
        const double e = img[(y1 * w + x1) * C + c];
        const double top = a + (b - a) * wx;
        const double bot = d + (e - d) * wx;
        out[(oy * out_w + ox) * C + c] = top + (bot - top) * wy;
      }
    }
  }
  return out;
}

/// Per-frame ROI boxes. Frames without a usable box (no face, degenerate
/// landmarks) reuse the previous frame's box. The first frame must yield one.
inline std::vector<PixelBox> roi_boxes(const LandmarkSequence& seq, RoiKind kind,
                                       std::size_t width, std::size_t height) {
  std::vector<PixelBox> boxes;
  boxes.reserve(seq.size());
  for (std::size_t m = 0; m < seq.size(); ++m) {
    std::optional<PixelBox> box;
    if (seq.valid(m)) box = roi_box(seq.frame(m), kind, width, height);
    if (box) {
      boxes.push_back(*box);
    } else if (m == 0) {
      throw DataError(std::string("frame 0 has no usable ") + std::string(roi_name(kind)) + " box");
    } else {
      boxes.push_back(boxes.back());
    }
  }
  return boxes;
}

inline bool resamples_to_square(RoiKind kind) {
  return kind == RoiKind::kEyes || kind == RoiKind::kMouth;
}

inline RoiClip crop_roi(const FrameClip& clip, const LandmarkSequence& seq, RoiKind kind) {
  if (clip.frames.rank() != 4 || clip.frames.dim(3) != 3) {
    throw ShapeError("frame clip must be [M,H,W,3], got " + shape_str(clip.frames.shape()));
  }
  if (clip.size() != seq.size()) {
    throw ShapeError("clip has " + std::to_string(clip.size()) + " frames but landmarks have " +
                     std::to_string(seq.size()));
  }
  const auto boxes = roi_boxes(seq, kind, clip.width(), clip.height());
  RoiClip roi;
  roi.kind = kind;
  roi.fps = clip.fps;
  roi.valid = seq.valid_mask();
  roi.frames.reserve(clip.size());
  for (std::size_t m = 0; m < clip.size(); ++m) {
    Tensor crop = crop_frame(clip, m, boxes[m]);
    roi.frames.push_back(resamples_to_square(kind) ? resize_bilinear(crop, kRoiSide, kRoiSide)
                                                   : std::move(crop));
  }
  return roi;
}

/// Uniform sampling positions round(i * (M-1) / (T-1)), i = 0..T-1.
inline std::vector<std::size_t> uniform_indices(std::size_t source_len, std::size_t target_len) {
  if (source_len == 0 || target_len == 0) throw ConfigError("uniform_indices: empty length");
  std::vector<std::size_t> idx(target_len, 0);
  if (target_len == 1) return idx;
  const double step = static_cast<double>(source_len - 1) / static_cast<double>(target_len - 1);
  for (std::size_t i = 0; i < target_len; ++i) {
    idx[i] = static_cast<std::size_t>(std::lround(static_cast<double>(i) * step));
  }
  return idx;
}

/// Maps each index to the nearest valid frame (the earlier one on ties).
inline std::vector<std::size_t> impute_to_valid(const std::vector<std::size_t>& idx,
                                                const std::vector<bool>& valid) {
  std::vector<std::size_t> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t i = idx[k];
    if (valid.at(i)) {
      out[k] = i;
      continue;
    }
    bool found = false;
    for (std::size_t d = 1; d < valid.size() && !found; ++d) {
      if (i >= d && valid[i - d]) {
        out[k] = i - d;
        found = true;
      } else if (i + d < valid.size() && valid[i + d]) {
        out[k] = i + d;
        found = true;
      }
    }
    if (!found) throw DataError("no valid frame to impute from");
  }
  return out;
}

/// Source frame indices used to standardize a sequence of `source_len`
/// frames with the given validity to exactly `T` frames.
inline std::vector<std::size_t> standardized_indices(const std::vector<bool>& valid, std::size_t T) {
  if (std::none_of(valid.begin(), valid.end(), [](bool v) { return v; })) {
    throw DataError("cannot standardize a sequence with zero valid frames");
  }
  return impute_to_valid(uniform_indices(valid.size(), T), valid);
}

inline RoiClip standardize_time(const RoiClip& roi, std::size_t T = kDefaultFrames) {
  const auto idx = standardized_indices(roi.valid, T);
  RoiClip out;
  out.kind = roi.kind;
  out.fps = roi.fps * static_cast<double>(T) / static_cast<double>(roi.size());
  out.frames.reserve(T);
  for (std::size_t i : idx) out.frames.push_back(roi.frames[i]);
  out.valid.assign(T, true);
  return out;
}

}  // namespace sffda
