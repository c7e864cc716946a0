// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sffda/landmarks.hpp"
#include "sffda/preprocess.hpp"
#include "sffda/serialize.hpp"

namespace sffda {

enum class Label { kAnxietyFree = 0, kAnxiety = 1 };
enum class Split { kNone, kTrain, kTest };

inline std::string_view label_name(Label l) { return l == Label::kAnxiety ? "anxiety" : "anxiety-free"; }
inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    default: return "none";
  }
}

struct Sample {
  std::string id;
  Label label = Label::kAnxietyFree;
  Split split = Split::kNone;
  double fps = 25.0;
  std::filesystem::path landmarks;  // resolved paths
  std::filesystem::path frames;

  int y() const { return label == Label::kAnxiety ? 1 : 0; }
};

/// Ordered sample list. Paths inside the text form are relative to the
/// manifest's directory.
struct Manifest {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t count(Label l) const {
    return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(),
                                                  [l](const Sample& s) { return s.label == l; }));
  }
  const Sample& find(const std::string& id) const {
    for (const auto& s : samples)
      if (s.id == id) return s;
    throw ConfigError("unknown sample id: " + id);
  }
  Manifest subset(Split sp) const {
    Manifest m;
    for (const auto& s : samples)
      if (s.split == sp) m.samples.push_back(s);
    return m;
  }
};

// Manifest text: one sample per line of space-separated key=value pairs,
//   id=s001 label=anxiety split=train fps=25 landmarks=a.lmk frames=a.sfft
// Blank lines and lines starting with '#' are ignored.

inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base,
                               const std::string& source = "manifest") {
  Manifest m;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = detail::split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    std::map<std::string, std::string> kv;
    for (auto t : toks) {
      auto eq = t.find('=');
      if (eq == std::string_view::npos || eq == 0) {
        throw ParseError(where + "expected key=value, got '" + std::string(t) + "'");
      }
      kv[std::string(t.substr(0, eq))] = std::string(t.substr(eq + 1));
    }
    auto req = [&](const char* key) -> const std::string& {
      auto it = kv.find(key);
      if (it == kv.end() || it->second.empty()) throw ParseError(where + "missing " + key);
      return it->second;
    };
    Sample s;
    s.id = req("id");
    if (!ids.insert(s.id).second) throw ParseError(where + "duplicate id " + s.id);
    const auto& lab = req("label");
    if (lab == "anxiety") {
      s.label = Label::kAnxiety;
    } else if (lab == "anxiety-free") {
      s.label = Label::kAnxietyFree;
    } else {
      throw ParseError(where + "label must be anxiety or anxiety-free, got " + lab);
    }
    if (auto it = kv.find("split"); it != kv.end()) {
      if (it->second == "train") s.split = Split::kTrain;
      else if (it->second == "test") s.split = Split::kTest;
      else if (it->second == "none") s.split = Split::kNone;
      else throw ParseError(where + "split must be train, test or none");
    }
    if (auto it = kv.find("fps"); it != kv.end()) {
      if (!detail::parse_double(it->second, s.fps) || !(s.fps > 0.0)) {
        throw ParseError(where + "bad fps " + it->second);
      }
    }
    s.landmarks = base / req("landmarks");
    s.frames = base / req("frames");
    m.samples.push_back(std::move(s));
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  Manifest m = parse_manifest(in, path.parent_path(), path.string());
  if (check_files) {
    for (const auto& s : m.samples) {
      for (const auto& p : {s.landmarks, s.frames}) {
        if (!std::filesystem::exists(p)) throw DataError(s.id + ": missing file " + p.string());
      }
    }
  }
  return m;
}

inline void write_manifest(std::ostream& out, const Manifest& m, const std::filesystem::path& base) {
  for (const auto& s : m.samples) {
    out << "id=" << s.id << " label=" << label_name(s.label) << " split=" << split_name(s.split)
        << " fps=" << detail::format_double(s.fps)
        << " landmarks=" << s.landmarks.lexically_relative(base).generic_string()
        << " frames=" << s.frames.lexically_relative(base).generic_string() << '\n';
  }
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  write_manifest(out, m, path.parent_path());
}

// ---------------------------------------------------------------------------
// Frame clips: an SFFT tensor [M,H,W,3] or a directory of binary PPM (P6)
// frames read in file-name order.

namespace detail {

inline Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t.front() != '#') return t;
      std::string rest;
      std::getline(in, rest);
    }
    throw FormatError(path.string() + ": truncated PPM header");
  };
  if (token() != "P6") throw FormatError(path.string() + ": not a binary PPM");
  const std::size_t w = std::stoul(token()), h = std::stoul(token()), maxval = std::stoul(token());
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw FormatError(path.string() + ": bad PPM header");
  in.get();
  std::vector<unsigned char> px(w * h * 3);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size())) throw FormatError(path.string() + ": truncated PPM");
  Tensor out(Shape{h, w, 3});
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = px[i] / static_cast<double>(maxval);
  return out;
}

}  // namespace detail

inline FrameClip load_frames(const std::filesystem::path& path, double fps) {
  FrameClip clip;
  clip.fps = fps;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(path)) {
      if (e.path().extension() == ".ppm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .ppm frames in " + path.string());
    std::vector<double> values;
    Shape frame_shape;
    for (const auto& f : files) {
      Tensor t = detail::read_ppm(f);
      if (frame_shape.empty()) frame_shape = t.shape();
      if (t.shape() != frame_shape) throw ShapeError(f.string() + ": frame size differs");
      values.insert(values.end(), t.data().begin(), t.data().end());
    }
    clip.frames = Tensor(Shape{files.size(), frame_shape[0], frame_shape[1], 3}, std::move(values));
  } else {
    clip.frames = io::load_tensor(path);
  }
  if (clip.frames.rank() != 4 || clip.frames.dim(3) != 3) {
    throw ShapeError(path.string() + ": frames must be [M,H,W,3], got " + shape_str(clip.frames.shape()));
  }
  return clip;
}

// ---------------------------------------------------------------------------

/// Randomly undersamples the majority class to the minority count. Kept
/// samples stay in their original order.
inline Manifest balance_classes(const Manifest& m, std::uint64_t seed) {
  const std::size_t n0 = m.count(Label::kAnxietyFree), n1 = m.count(Label::kAnxiety);
  if (n0 == 0 || n1 == 0) throw DataError("balance_classes needs both labels present");
  if (n0 == n1) return m;
  const Label major = n0 > n1 ? Label::kAnxietyFree : Label::kAnxiety;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.samples[i].label == major) pool.push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::set<std::size_t> keep(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(n0, n1)));
  Manifest out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.samples[i].label != major || keep.count(i)) out.samples.push_back(m.samples[i]);
  }
  return out;
}

/// Stratified split. Each class contributes round(ratio * n) training
/// samples, at least one to each side.
inline Manifest split(const Manifest& m, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0,1)");
  Manifest out = m;
  std::mt19937_64 rng(seed);
  for (Label l : {Label::kAnxietyFree, Label::kAnxiety}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m.samples[i].label == l) idx.push_back(i);
    if (idx.size() < 2) {
      throw DataError(std::string("class ") + std::string(label_name(l)) + " has fewer than 2 samples");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(ratio * n)), 1,
                                                 idx.size() - 1);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.samples[idx[k]].split = k < n_train ? Split::kTrain : Split::kTest;
    }
  }
  return out;
}

}  // namespace sffda
