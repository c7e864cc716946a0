// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sffda/dataset.hpp"
#include "sffda/landmarks.hpp"
#include "sffda/metrics.hpp"
#include "sffda/preprocess.hpp"
#include "sffda/serialize.hpp"
#include "sffda/streams.hpp"

// Procedural face clips: flat-colored boxes for forehead, eyes, nose and
// mouth on a skin-colored face, with landmarks placed on the box outlines.
// Class 0 is anxiety-free, class 1 anxiety.
namespace sffda::synth {

struct Box {
  double x0, y0, x1, y1;  // normalized coordinates
};

inline constexpr Box kFace{0.22, 0.06, 0.78, 0.90};
inline constexpr Box kForehead{0.35, 0.12, 0.65, 0.26};
inline constexpr Box kLeftEye{0.30, 0.32, 0.44, 0.42};
inline constexpr Box kRightEye{0.56, 0.32, 0.70, 0.42};
inline constexpr Box kNose{0.44, 0.46, 0.56, 0.60};
inline constexpr Box kMouth{0.36, 0.66, 0.64, 0.78};

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t n_free = 4;     // anxiety-free samples
  std::size_t n_anxiety = 4;  // anxiety samples
  double fps = 25.0;
  double duration = 20.0;  // seconds
  std::size_t width = 32;
  std::size_t height = 32;
  std::array<double, 2> pulse_hz{1.0, 1.6};
  double pulse_amplitude = 0.02;
  std::array<double, 2> eye_open{0.25, 0.75};   // dark iris band height / eye height
  std::array<double, 2> mouth_open{0.15, 0.75};  // dark band height / mouth height
  std::array<double, 2> drift{-0.1, 0.1};       // horizontal head offset at the clip end (start is the negative)
  double noise = 0.01;                           // per-pixel Gaussian sigma
  std::vector<Stream> signal_streams{kAllStreams.begin(), kAllStreams.end()};

  bool carries(Stream s) const {
    return std::find(signal_streams.begin(), signal_streams.end(), s) != signal_streams.end();
  }

  void validate() const {
    for (double f : pulse_hz) {
      if (f < 0.75 || f > 3.33) throw ConfigError("pulse frequencies must lie in [0.75, 3.33] Hz");
    }
    if (duration < 20.0) throw ConfigError("duration must be at least 20 s");
    if (!(fps > 0.0)) throw ConfigError("fps must be positive");
    if (width < 8 || height < 8) throw ConfigError("frames must be at least 8x8");
    for (double d : drift) {
      if (std::abs(d) > 0.2) throw ConfigError("drift must lie in [-0.2, 0.2]");
    }
    if (noise < 0.0) throw ConfigError("noise must be non-negative");
  }

  std::size_t frames() const { return static_cast<std::size_t>(std::lround(duration * fps)); }
};

inline std::string to_text(const SynthSpec& s) {
  std::ostringstream os;
  auto num = [](double v) { return format_number(v); };
  os << "seed=" << s.seed << '\n'
     << "n_free=" << s.n_free << '\n'
     << "n_anxiety=" << s.n_anxiety << '\n'
     << "fps=" << num(s.fps) << '\n'
     << "duration=" << num(s.duration) << '\n'
     << "width=" << s.width << '\n'
     << "height=" << s.height << '\n'
     << "pulse_hz=" << num(s.pulse_hz[0]) << ',' << num(s.pulse_hz[1]) << '\n'
     << "pulse_amplitude=" << num(s.pulse_amplitude) << '\n'
     << "eye_open=" << num(s.eye_open[0]) << ',' << num(s.eye_open[1]) << '\n'
     << "mouth_open=" << num(s.mouth_open[0]) << ',' << num(s.mouth_open[1]) << '\n'
     << "drift=" << num(s.drift[0]) << ',' << num(s.drift[1]) << '\n'
     << "noise=" << num(s.noise) << '\n'
     << "signal_streams=" << streams_str(s.signal_streams) << '\n';
  return os.str();
}

/// Per-clip appearance; everything the renderer needs.
struct ClipParams {
  double pulse_hz = 1.0;
  double pulse_amplitude = 0.02;
  double pulse_phase = 0.0;
  double eye_open = 0.25;
  double mouth_open = 0.15;
  double drift = 0.0;
  double noise = 0.0;
  std::uint64_t noise_seed = 0;
};

/// Landmark template with every ROI's points spread evenly over its box
/// outline (corners included). Non-ROI points are scattered inside the face.
inline std::vector<Point3> landmark_template() {
  std::vector<Point3> pts(kLandmarkCount);
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> ux(kFace.x0 + 0.04, kFace.x1 - 0.04);
  std::uniform_real_distribution<double> uy(kFace.y0 + 0.04, kFace.y1 - 0.04);
  std::uniform_real_distribution<double> uz(-0.05, 0.05);
  for (auto& p : pts) p = {ux(rng), uy(rng), uz(rng)};
  auto outline = [&pts](std::span<const std::size_t> idx, const Box& b) {
    const std::size_t per_side = idx.size() / 4;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double u = static_cast<double>(k % per_side) / static_cast<double>(per_side);
      Point3 p{};
      switch (k / per_side) {
        case 0: p = {b.x0 + u * (b.x1 - b.x0), b.y0, 0.0}; break;
        case 1: p = {b.x1, b.y0 + u * (b.y1 - b.y0), 0.0}; break;
        case 2: p = {b.x1 - u * (b.x1 - b.x0), b.y1, 0.0}; break;
        default: p = {b.x0, b.y1 - u * (b.y1 - b.y0), 0.0}; break;
      }
      pts[idx[k]] = p;
    }
  };
  std::span<const std::size_t> eyes = roi_table::kEyes;
  outline(eyes.first(16), kLeftEye);
  outline(eyes.last(16), kRightEye);
  outline(roi_table::kMouth, kMouth);
  outline(roi_table::kNose, kNose);
  outline(roi_table::kForehead, kForehead);
  return pts;
}

namespace detail {

/// Adds `color * coverage` for box b (shifted by dx) over pixel row/col
/// coverage, where coverage is the exact overlap area fraction.
inline void paint(std::vector<double>& img, std::size_t W, std::size_t H, Box b, double dx,
                  const std::array<double, 3>& color, bool replace) {
  b.x0 += dx;
  b.x1 += dx;
  const double fw = static_cast<double>(W), fh = static_cast<double>(H);
  const auto xa = static_cast<std::size_t>(std::clamp(std::floor(b.x0 * fw), 0.0, fw));
  const auto xb = static_cast<std::size_t>(std::clamp(std::ceil(b.x1 * fw), 0.0, fw));
  const auto ya = static_cast<std::size_t>(std::clamp(std::floor(b.y0 * fh), 0.0, fh));
  const auto yb = static_cast<std::size_t>(std::clamp(std::ceil(b.y1 * fh), 0.0, fh));
  for (std::size_t y = ya; y < yb; ++y) {
    const double cy = std::max(0.0, std::min(b.y1 * fh, y + 1.0) - std::max(b.y0 * fh, static_cast<double>(y)));
    for (std::size_t x = xa; x < xb; ++x) {
      const double cx = std::max(0.0, std::min(b.x1 * fw, x + 1.0) - std::max(b.x0 * fw, static_cast<double>(x)));
      const double cov = cx * cy;
      if (cov <= 0.0) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        double& v = img[(y * W + x) * 3 + c];
        v = replace ? v * (1.0 - cov) + color[c] * cov : v + color[c] * cov;
      }
    }
  }
}

}  // namespace detail

struct Clip {
  FrameClip frames;
  LandmarkSequence landmarks;
};

/// Renders one clip. Frame values are clamped to [0,1] and quantized to
/// multiples of 1/255.
inline Clip render_clip(const ClipParams& p, double fps, std::size_t n_frames, std::size_t W, std::size_t H) {
  const auto tmpl = landmark_template();
  std::mt19937_64 rng(p.noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Clip out;
  out.frames.fps = fps;
  out.frames.frames = Tensor(Shape{n_frames, H, W, 3});
  out.landmarks = LandmarkSequence(fps);
  const double mid = static_cast<double>(n_frames - 1) / (2.0 * fps);
  const std::array<double, 3> skin{0.62, 0.46, 0.40};
  const std::array<double, 3> lip{0.70, 0.32, 0.32};
  std::vector<double> img(H * W * 3);
  std::vector<Point3> pts(kLandmarkCount);
  for (std::size_t m = 0; m < n_frames; ++m) {
    const double t = static_cast<double>(m) / fps;
    const double dx = mid > 0.0 ? p.drift * (t - mid) / mid : 0.0;
    std::fill(img.begin(), img.end(), 0.15);
    detail::paint(img, W, H, kFace, dx, skin, true);
    const double pulse = p.pulse_amplitude * std::sin(2.0 * std::numbers::pi * p.pulse_hz * t + p.pulse_phase);
    for (const Box& b : {kForehead, kNose}) {
      detail::paint(img, W, H, b, dx, {skin[0], skin[1] + pulse, skin[2]}, true);
    }
    for (const Box& b : {kLeftEye, kRightEye}) {
      detail::paint(img, W, H, b, dx, {0.92, 0.92, 0.90}, true);
      const double h = p.eye_open * (b.y1 - b.y0);
      const double y = 0.5 * (b.y0 + b.y1);
      detail::paint(img, W, H, {b.x0 + 0.02, y - h / 2, b.x1 - 0.02, y + h / 2}, dx, {0.10, 0.08, 0.06}, true);
    }
    detail::paint(img, W, H, kMouth, dx, lip, true);
    const double band = p.mouth_open * (kMouth.y1 - kMouth.y0);
    const double cy = 0.5 * (kMouth.y0 + kMouth.y1);
    detail::paint(img, W, H, {kMouth.x0 + 0.03, cy - band / 2, kMouth.x1 - 0.03, cy + band / 2}, dx,
                  {0.08, 0.04, 0.04}, true);
    double* dst = out.frames.frames.data().data() + m * H * W * 3;
    for (std::size_t i = 0; i < img.size(); ++i) {
      double v = img[i];
      if (p.noise > 0.0) v += p.noise * gauss(rng);
      dst[i] = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    }
    for (std::size_t k = 0; k < kLandmarkCount; ++k) pts[k] = {tmpl[k].x + dx, tmpl[k].y, tmpl[k].z};
    out.landmarks.push_frame(pts, true);
  }
  return out;
}

/// A clip carrying a pure green-channel pulse in the nose and forehead boxes.
inline Clip gen_pulse_clip(double pulse_hz, double amplitude, double fps, double duration,
                           double noise = 0.0, std::uint64_t seed = 0, std::size_t side = 32) {
  ClipParams p;
  p.pulse_hz = pulse_hz;
  p.pulse_amplitude = amplitude;
  p.noise = noise;
  p.noise_seed = seed;
  return render_clip(p, fps, static_cast<std::size_t>(std::lround(duration * fps)), side, side);
}

/// Appearance of sample `index` with class `y`. Streams outside
/// spec.signal_streams use class-0 parameters for both classes.
inline ClipParams sample_params(const SynthSpec& spec, std::size_t index, int y) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  auto cls = [&](Stream s) { return spec.carries(s) ? y : 0; };
  ClipParams p;
  p.pulse_hz = spec.pulse_hz[static_cast<std::size_t>(cls(Stream::kIppg))];
  p.pulse_amplitude = spec.pulse_amplitude;
  p.pulse_phase = phase(rng);
  p.eye_open = spec.eye_open[static_cast<std::size_t>(cls(Stream::kEyes))] * (1.0 + 0.1 * jitter(rng));
  p.mouth_open = spec.mouth_open[static_cast<std::size_t>(cls(Stream::kMouth))] * (1.0 + 0.1 * jitter(rng));
  p.drift = spec.drift[static_cast<std::size_t>(cls(Stream::kLocation))];
  p.noise = spec.noise;
  p.noise_seed = rng();
  return p;
}

inline std::vector<int> class_labels(const SynthSpec& spec) {
  std::vector<int> y(spec.n_free, 0);
  y.insert(y.end(), spec.n_anxiety, 1);
  return y;
}

inline std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%03zu", index);
  return buf;
}

inline Clip gen_sample(const SynthSpec& spec, std::size_t index) {
  const auto y = class_labels(spec);
  return render_clip(sample_params(spec, index, y.at(index)), spec.fps, spec.frames(), spec.width, spec.height);
}

/// Writes samples/<id>.sfft, samples/<id>.lmk and manifest.txt under `dir`.
inline Manifest gen_classification_set(const SynthSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  const auto samples_dir = dir / "samples";
  std::filesystem::create_directories(samples_dir);
  Manifest m;
  const auto y = class_labels(spec);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto clip = gen_sample(spec, i);
    Sample s;
    s.id = sample_id(i);
    s.label = y[i] ? Label::kAnxiety : Label::kAnxietyFree;
    s.fps = spec.fps;
    s.frames = samples_dir / (s.id + ".sfft");
    s.landmarks = samples_dir / (s.id + ".lmk");
    io::save_tensor(s.frames, clip.frames.frames);
    save_landmarks(s.landmarks, clip.landmarks);
    m.samples.push_back(std::move(s));
  }
  save_manifest(dir / "manifest.txt", m);
  return m;
}

}  // namespace sffda::synth
