// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sffda/errors.hpp"
#include "sffda/tensor.hpp"

namespace sffda {

enum class Stream { kLocation = 0, kEyes = 1, kMouth = 2, kIppg = 3 };

inline constexpr std::array<Stream, 4> kAllStreams = {Stream::kLocation, Stream::kEyes,
                                                      Stream::kMouth, Stream::kIppg};

inline std::string stream_name(Stream s) {
  switch (s) {
    case Stream::kLocation: return "location";
    case Stream::kEyes: return "eyes";
    case Stream::kMouth: return "mouth";
    case Stream::kIppg: return "ippg";
  }
  return "?";
}

inline Stream parse_stream(std::string_view name) {
  if (name == "location" || name == "loc") return Stream::kLocation;
  if (name == "eyes") return Stream::kEyes;
  if (name == "mouth") return Stream::kMouth;
  if (name == "ippg") return Stream::kIppg;
  throw ConfigError("unknown stream '" + std::string(name) + "'");
}

inline bool is_clip_stream(Stream s) { return s == Stream::kEyes || s == Stream::kMouth; }

/// Comma-separated stream list, returned in canonical order.
inline std::vector<Stream> parse_streams(std::string_view list) {
  std::array<bool, 4> on{};
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const auto comma = std::min(list.find(',', pos), list.size());
    const auto name = list.substr(pos, comma - pos);
    if (name.empty()) throw ConfigError("empty stream name in '" + std::string(list) + "'");
    const auto s = parse_stream(name);
    if (on[static_cast<std::size_t>(s)]) throw ConfigError("stream listed twice: " + std::string(name));
    on[static_cast<std::size_t>(s)] = true;
    pos = comma + 1;
  }
  std::vector<Stream> out;
  for (Stream s : kAllStreams)
    if (on[static_cast<std::size_t>(s)]) out.push_back(s);
  return out;
}

inline std::string streams_str(const std::vector<Stream>& streams) {
  std::string out;
  for (Stream s : streams) out += (out.empty() ? "" : ",") + stream_name(s);
  return out;
}

/// Per-stream inputs of one sample: location [T,1404], eyes/mouth
/// [3,T,side,side], ippg [K,198].
using Features = std::map<Stream, Tensor>;

}  // namespace sffda
