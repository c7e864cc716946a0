// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "sffda/behavior.hpp"
#include "sffda/dataset.hpp"
#include "sffda/ippg.hpp"
#include "sffda/serialize.hpp"
#include "sffda/streams.hpp"

namespace sffda {

inline constexpr double kMinValidFraction = 0.9;

inline Tensor ippg_feature(const FrameClip& clip, const LandmarkSequence& seq) {
  return ippg::assemble_ippg(ippg::pixel_mean(crop_roi(clip, seq, RoiKind::kNose)),
                             ippg::pixel_mean(crop_roi(clip, seq, RoiKind::kForehead)));
}

/// Builds the requested streams for one clip. Rejects clips whose face
/// detection rate is below kMinValidFraction.
inline Features extract_features(const FrameClip& clip, const LandmarkSequence& seq,
                                 const std::vector<Stream>& streams, std::size_t T = kDefaultFrames) {
  if (!validate_clip(seq, kMinValidFraction)) {
    throw DataError("clip rejected: face present in " + std::to_string(seq.valid_count()) + " of " +
                    std::to_string(seq.size()) + " frames");
  }
  Features out;
  for (Stream s : streams) {
    switch (s) {
      case Stream::kLocation: out[s] = location_feature(seq, T); break;
      case Stream::kEyes: out[s] = eyes_feature(clip, seq, T); break;
      case Stream::kMouth: out[s] = mouth_feature(clip, seq, T); break;
      case Stream::kIppg: out[s] = ippg_feature(clip, seq); break;
    }
  }
  return out;
}

inline Features extract_sample(const Sample& s, const std::vector<Stream>& streams,
                               std::size_t T = kDefaultFrames) {
  try {
    const auto seq = load_landmarks(s.landmarks, s.fps);
    const auto clip = load_frames(s.frames, s.fps);
    return extract_features(clip, seq, streams, T);
  } catch (const Error& e) {
    throw DataError(s.id + ": " + e.what());
  }
}

inline std::filesystem::path feature_path(const std::filesystem::path& dir, const std::string& id, Stream s) {
  return dir / (id + "." + stream_name(s) + ".sfft");
}

inline void save_features(const std::filesystem::path& dir, const std::string& id, const Features& f) {
  for (const auto& [s, t] : f) io::save_tensor(feature_path(dir, id, s), t);
}

inline Features load_features(const std::filesystem::path& dir, const std::string& id,
                              const std::vector<Stream>& streams) {
  Features f;
  for (Stream s : streams) f[s] = io::load_tensor(feature_path(dir, id, s));
  return f;
}

/// Worker count from SFFDA_THREADS (default 1).
inline std::size_t thread_budget() {
  const char* env = std::getenv("SFFDA_THREADS");
  if (!env || !*env) return 1;
  try {
    const long v = std::stol(env);
    if (v >= 1) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string("SFFDA_THREADS must be a positive integer, got '") + env + "'");
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each result slot is
/// written by exactly one call, so output does not depend on scheduling.
/// The first exception (by index) is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t i = worker; i < n; i += stride) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(run, w, threads);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<Features> extract_all(const Manifest& m, const std::vector<Stream>& streams,
                                         std::size_t T = kDefaultFrames, std::size_t threads = 1) {
  std::vector<Features> out(m.size());
  parallel_for(m.size(), threads, [&](std::size_t i) { out[i] = extract_sample(m.samples[i], streams, T); });
  return out;
}

}  // namespace sffda
