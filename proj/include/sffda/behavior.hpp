// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "sffda/landmarks.hpp"
#include "sffda/preprocess.hpp"
#include "sffda/tensor.hpp"

namespace sffda {

inline constexpr std::size_t kLocationDim = kLandmarkCount * 3;

/// [T, 1404]: the landmarks of T uniformly sampled frames, each row the
/// flattened (x,y,z) of points 0..467. Invalid frames are imputed from the
/// nearest valid one.
inline Tensor location_feature(const LandmarkSequence& seq, std::size_t T = kDefaultFrames) {
  const auto idx = standardized_indices(seq.valid_mask(), T);
  Tensor out(Shape{T, kLocationDim});
  for (std::size_t t = 0; t < T; ++t) {
    const auto pts = seq.frame(idx[t]);
    for (std::size_t p = 0; p < kLandmarkCount; ++p) {
      out[t * kLocationDim + 3 * p] = pts[p].x;
      out[t * kLocationDim + 3 * p + 1] = pts[p].y;
      out[t * kLocationDim + 3 * p + 2] = pts[p].z;
    }
  }
  return out;
}

/// [T,h,w,C] -> [C,T,h,w].
inline Tensor to_channels_first(const Tensor& thwc) {
  if (thwc.rank() != 4) throw ShapeError("to_channels_first: expected rank 4, got " + shape_str(thwc.shape()));
  const std::size_t T = thwc.dim(0), H = thwc.dim(1), W = thwc.dim(2), C = thwc.dim(3);
  Tensor out(Shape{C, T, H, W});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < C; ++c)
          out[((c * T + t) * H + y) * W + x] = thwc[((t * H + y) * W + x) * C + c];
  return out;
}

/// [3, T, 40, 40] clip of an eyes or mouth ROI.
inline Tensor clip_feature(const FrameClip& clip, const LandmarkSequence& seq, RoiKind kind,
                           std::size_t T = kDefaultFrames) {
  if (!resamples_to_square(kind)) throw ConfigError("clip features exist for eyes and mouth only");
  return to_channels_first(standardize_time(crop_roi(clip, seq, kind), T).stacked());
}

inline Tensor eyes_feature(const FrameClip& clip, const LandmarkSequence& seq,
                           std::size_t T = kDefaultFrames) {
  return clip_feature(clip, seq, RoiKind::kEyes, T);
}

inline Tensor mouth_feature(const FrameClip& clip, const LandmarkSequence& seq,
                            std::size_t T = kDefaultFrames) {
  return clip_feature(clip, seq, RoiKind::kMouth, T);
}

}  // namespace sffda
