// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sffda/errors.hpp"

namespace sffda {

inline constexpr std::size_t kLandmarkCount = 468;

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Point3&, const Point3&) = default;
};

/// Per-frame face-mesh keypoints. x and y are normalized to the image
/// width/height; z is the detector's relative depth.
class LandmarkSequence {
 public:
  LandmarkSequence() = default;
  explicit LandmarkSequence(double fps) : fps_(fps) {
    if (!(fps > 0.0)) throw ConfigError("fps must be positive");
  }

  void push_frame(std::span<const Point3> points, bool valid) {
    if (points.size() != kLandmarkCount) {
      throw DataError("frame " + std::to_string(size()) + ": expected 468 points, got " +
                      std::to_string(points.size()));
    }
    points_.insert(points_.end(), points.begin(), points.end());
    valid_.push_back(valid);
  }

  void push_invalid_frame() {
    points_.resize(points_.size() + kLandmarkCount);
    valid_.push_back(false);
  }

  std::size_t size() const { return valid_.size(); }
  double fps() const { return fps_; }
  bool valid(std::size_t frame) const { return valid_.at(frame); }
  const std::vector<bool>& valid_mask() const { return valid_; }

  std::span<const Point3> frame(std::size_t i) const {
    return std::span<const Point3>(points_).subspan(i * kLandmarkCount, kLandmarkCount);
  }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (bool v : valid_) n += v ? 1 : 0;
    return n;
  }

  double valid_fraction() const {
    return size() == 0 ? 0.0 : static_cast<double>(valid_count()) / static_cast<double>(size());
  }

 private:
  double fps_ = 25.0;
  std::vector<Point3> points_;
  std::vector<bool> valid_;
};

// ---------------------------------------------------------------------------
// ROI landmark index table (face-mesh topology).

enum class RoiKind { kEyes, kMouth, kNose, kForehead };

inline constexpr int kRoiTableVersion = 1;

namespace roi_table {
// Contours of both eyes; the "eyes" ROI spans both.
inline constexpr std::array<std::size_t, 32> kEyes = {
    33,  7,   163, 144, 145, 153, 154, 155, 133, 173, 157, 158, 159, 160, 161, 246,
    263, 249, 390, 373, 374, 380, 381, 382, 362, 398, 384, 385, 386, 387, 388, 466};
// Outer lip contour.
inline constexpr std::array<std::size_t, 20> kMouth = {61,  146, 91,  181, 84,  17,  314,
                                                       405, 321, 375, 291, 409, 270, 269,
                                                       267, 0,   37,  39,  40,  185};
inline constexpr std::array<std::size_t, 16> kNose = {1,  2,  4,   5,   6,  19,  45,  275,
                                                      44, 274, 48, 278, 64, 294, 98, 327};
inline constexpr std::array<std::size_t, 12> kForehead = {10,  67,  69,  104, 108, 109,
                                                          151, 297, 299, 333, 337, 338};
}  // namespace roi_table

inline std::span<const std::size_t> roi_indices(RoiKind kind) {
  switch (kind) {
    case RoiKind::kEyes: return roi_table::kEyes;
    case RoiKind::kMouth: return roi_table::kMouth;
    case RoiKind::kNose: return roi_table::kNose;
    case RoiKind::kForehead: return roi_table::kForehead;
  }
  throw ConfigError("unknown ROI kind");
}

inline std::string_view roi_name(RoiKind kind) {
  switch (kind) {
    case RoiKind::kEyes: return "eyes";
    case RoiKind::kMouth: return "mouth";
    case RoiKind::kNose: return "nose";
    case RoiKind::kForehead: return "forehead";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Text format: one frame per line,
//   frame_index valid x1 y1 z1 ... x468 y468 z468
// `valid` is 0 or 1. Invalid frames may omit the coordinates.

namespace detail {

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline bool parse_double(std::string_view tok, double& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

inline LandmarkSequence parse_landmarks(std::istream& in, double fps,
                                        const std::string& source = "landmarks") {
  LandmarkSequence seq(fps);
  std::string line;
  std::size_t lineno = 0;
  std::vector<Point3> pts;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = detail::split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    double idx = 0.0, valid = 0.0;
    if (toks.size() < 2 || !detail::parse_double(toks[0], idx) ||
        !detail::parse_double(toks[1], valid)) {
      throw ParseError(where + "malformed record header");
    }
    const auto frame = static_cast<std::size_t>(idx);
    if (idx < 0 || static_cast<double>(frame) != idx || frame != seq.size()) {
      throw ParseError(where + "expected frame index " + std::to_string(seq.size()));
    }
    if (valid != 0.0 && valid != 1.0) throw ParseError(where + "valid flag must be 0 or 1");
    const std::size_t nvals = toks.size() - 2;
    if (valid == 0.0 && nvals == 0) {
      seq.push_invalid_frame();
      continue;
    }
    if (nvals % 3 != 0 || nvals / 3 != kLandmarkCount) {
      throw ParseError(where + "frame " + std::to_string(frame) + ": expected 468 points, got " +
                       (nvals % 3 == 0 ? std::to_string(nvals / 3)
                                       : std::to_string(nvals) + " values"));
    }
    pts.assign(kLandmarkCount, {});
    for (std::size_t p = 0; p < kLandmarkCount; ++p) {
      double* dst[3] = {&pts[p].x, &pts[p].y, &pts[p].z};
      for (std::size_t c = 0; c < 3; ++c) {
        if (!detail::parse_double(toks[2 + 3 * p + c], *dst[c])) {
          throw ParseError(where + "frame " + std::to_string(frame) + ": bad number '" +
                           std::string(toks[2 + 3 * p + c]) + "'");
        }
      }
      if (valid == 1.0 && (pts[p].x < 0.0 || pts[p].x > 1.0 || pts[p].y < 0.0 || pts[p].y > 1.0)) {
        throw ParseError(where + "frame " + std::to_string(frame) + ": point " +
                         std::to_string(p) + " outside the normalized image");
      }
    }
    seq.push_frame(pts, valid == 1.0);
  }
  return seq;
}

inline LandmarkSequence load_landmarks(const std::filesystem::path& path, double fps) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open landmark file " + path.string());
  return parse_landmarks(in, fps, path.string());
}

inline void write_landmarks(std::ostream& out, const LandmarkSequence& seq) {
  for (std::size_t f = 0; f < seq.size(); ++f) {
    out << f << ' ' << (seq.valid(f) ? 1 : 0);
    for (const Point3& p : seq.frame(f)) {
      out << ' ' << detail::format_double(p.x) << ' ' << detail::format_double(p.y) << ' '
          << detail::format_double(p.z);
    }
    out << '\n';
  }
}

inline void save_landmarks(const std::filesystem::path& path, const LandmarkSequence& seq) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  write_landmarks(out, seq);
}

/// Accepts a clip when its face-present fraction reaches the threshold.
inline bool validate_clip(const LandmarkSequence& seq, double min_valid_fraction = 0.9) {
  return seq.size() > 0 && seq.valid_fraction() >= min_valid_fraction;
}

}  // namespace sffda
