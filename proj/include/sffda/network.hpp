// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sffda/autodiff.hpp"
#include "sffda/behavior.hpp"
#include "sffda/optim.hpp"
#include "sffda/serialize.hpp"
#include "sffda/streams.hpp"

namespace sffda {

inline constexpr double kMinChannelStd = 1e-3;

/// Shifts and scales each channel of a [C, ...] tensor to zero mean and unit
/// standard deviation. The deviation is floored at kMinChannelStd so a flat
/// channel maps to zeros.
inline Tensor standardize_channels(Tensor x) {
  const std::size_t C = x.dim(0), n = x.size() / C;
  for (std::size_t c = 0; c < C; ++c) {
    auto ch = x.data().subspan(c * n, n);
    double mean = 0.0, var = 0.0;
    for (double v : ch) mean += v;
    mean /= static_cast<double>(n);
    for (double v : ch) var += (v - mean) * (v - mean);
    const double sd = std::max(std::sqrt(var / static_cast<double>(n)), kMinChannelStd);
    for (double& v : ch) v = (v - mean) / sd;
  }
  return x;
}

struct LstmState {
  ad::Var h;
  ad::Var c;
};

/// One LSTM cell update from a precomputed input projection xw = x * wx
/// ([4H]). Gates are ordered i, f, g, o.
inline LstmState lstm_cell(const ad::Var& xw, const LstmState& s, const ad::Var& wh, const ad::Var& b) {
  const std::size_t H = s.h.shape()[0];
  if (xw.shape() != Shape{4 * H}) {
    throw ShapeError("lstm: input projection " + shape_str(xw.shape()) + " does not match hidden size " +
                     std::to_string(H));
  }
  const auto z = ad::add(xw, ad::linear(wh, s.h, b));
  const auto i = ad::sigmoid(ad::slice(z, 0, H));
  const auto f = ad::sigmoid(ad::slice(z, H, H));
  const auto g = ad::tanh(ad::slice(z, 2 * H, H));
  const auto o = ad::sigmoid(ad::slice(z, 3 * H, H));
  const auto c = ad::add(ad::mul(f, s.c), ad::mul(i, g));
  return {ad::mul(o, ad::tanh(c)), c};
}

/// x [D], wx [D,4H], wh [4H,H], b [4H].
inline LstmState lstm_step(const ad::Var& x, const LstmState& s, const ad::Var& wx, const ad::Var& wh,
                           const ad::Var& b) {
  if (x.shape().size() != 1 || wx.shape().size() != 2 || wx.shape()[0] != x.shape()[0]) {
    throw ShapeError("lstm_step: input " + shape_str(x.shape()) + " does not match weights " +
                     shape_str(wx.shape()));
  }
  const auto xw = ad::reshape(ad::matmul(ad::reshape(x, {1, x.shape()[0]}), wx), {wx.shape()[1]});
  return lstm_cell(xw, s, wh, b);
}

struct NetworkConfig {
  std::vector<Stream> streams{kAllStreams.begin(), kAllStreams.end()};
  std::size_t frames = kDefaultFrames;
  std::size_t side = kRoiSide;
  std::array<std::size_t, 5> widths{8, 16, 32, 32, 64};
  std::size_t attention_channels = 4;
  std::size_t hidden = 64;
  std::size_t fusion_hidden = 64;
  std::size_t location_dim = kLocationDim;
  std::size_t ippg_dim = 198;

  std::size_t embedding_dim(Stream s) const { return is_clip_stream(s) ? widths[4] : hidden; }

  std::size_t fusion_input() const {
    std::size_t n = 0;
    for (Stream s : streams) n += embedding_dim(s);
    return n;
  }

  void validate() const {
    if (streams.empty()) throw ConfigError("network needs at least one stream");
    if (frames == 0 || frames % 4 != 0) throw ConfigError("frames must be a positive multiple of 4");
    if (side == 0 || side % 4 != 0) throw ConfigError("side must be a positive multiple of 4");
    for (std::size_t w : widths)
      if (w == 0) throw ConfigError("layer widths must be positive");
    if (attention_channels == 0 || hidden == 0 || fusion_hidden == 0 || location_dim == 0 || ippg_dim == 0) {
      throw ConfigError("network sizes must be positive");
    }
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline std::string to_text(const NetworkConfig& c) {
  std::ostringstream os;
  os << "streams=" << streams_str(c.streams) << '\n'
     << "frames=" << c.frames << '\n'
     << "side=" << c.side << '\n'
     << "widths=" << c.widths[0] << ',' << c.widths[1] << ',' << c.widths[2] << ',' << c.widths[3]
     << ',' << c.widths[4] << '\n'
     << "attention_channels=" << c.attention_channels << '\n'
     << "hidden=" << c.hidden << '\n'
     << "fusion_hidden=" << c.fusion_hidden << '\n'
     << "location_dim=" << c.location_dim << '\n'
     << "ippg_dim=" << c.ippg_dim << '\n';
  return os.str();
}

namespace detail {
inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}
}  // namespace detail

/// Applies one key=value setting; unknown keys throw.
inline void apply_setting(NetworkConfig& c, const std::string& key, const std::string& value) {
  if (key == "streams") {
    c.streams = parse_streams(value);
  } else if (key == "frames") {
    c.frames = detail::parse_size(key, value);
  } else if (key == "side") {
    c.side = detail::parse_size(key, value);
  } else if (key == "widths") {
    std::stringstream ss(value);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
      if (i >= 5) throw ConfigError("widths: expected 5 values");
      c.widths[i++] = detail::parse_size(key, item);
    }
    if (i != 5) throw ConfigError("widths: expected 5 values");
  } else if (key == "attention_channels") {
    c.attention_channels = detail::parse_size(key, value);
  } else if (key == "hidden") {
    c.hidden = detail::parse_size(key, value);
  } else if (key == "fusion_hidden") {
    c.fusion_hidden = detail::parse_size(key, value);
  } else if (key == "location_dim") {
    c.location_dim = detail::parse_size(key, value);
  } else if (key == "ippg_dim") {
    c.ippg_dim = detail::parse_size(key, value);
  } else {
    throw ConfigError("unknown network setting '" + key + "'");
  }
}

inline NetworkConfig parse_network_config(std::istream& in) {
  NetworkConfig c;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("network config: expected key=value, got '" + line + "'");
    apply_setting(c, line.substr(0, eq), line.substr(eq + 1));
  }
  c.validate();
  return c;
}

/// Shapes of intermediate activations, recorded when requested.
using StageTrace = std::vector<std::pair<std::string, Shape>>;

struct ForwardResult {
  std::vector<ad::Var> embeddings;  // one per configured stream, config order
  ad::Var logit;                    // [1]
  double prob = 0.5;
};

/// Per-stream 3D-CNN / LSTM extractors and the fused classifier head. One
/// parameter store serves every forward pass.
class Network {
 public:
  explicit Network(NetworkConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    for (Stream s : cfg_.streams) {
      if (is_clip_stream(s)) {
        add_cnn(stream_name(s), rng);
      } else {
        add_lstm(stream_name(s), s == Stream::kLocation ? cfg_.location_dim : cfg_.ippg_dim, rng);
      }
    }
    add_dense("fusion.fc1", cfg_.fusion_input(), cfg_.fusion_hidden, rng);
    add_dense("fusion.fc2", cfg_.fusion_hidden, 1, rng);
  }

  const NetworkConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Shape input_shape(Stream s) const {
    switch (s) {
      case Stream::kLocation: return {cfg_.frames, cfg_.location_dim};
      case Stream::kEyes:
      case Stream::kMouth: return {3, cfg_.frames, cfg_.side, cfg_.side};
      case Stream::kIppg: return {0, cfg_.ippg_dim};  // any number of rows
    }
    return {};
  }

  /// [C,T,H,W] -> [1,T,1,1] sigmoid weights over time.
  ad::Var temporal_attention(const std::string& prefix, const ad::Var& x) const {
    const std::string p = prefix + ".tatt.";
    auto m = pooled_maps(x);
    auto h = ad::relu(conv(p + "c1", m, {1, 1, 1}));
    h = ad::relu(conv(p + "c2", h, {1, 1, 1}));
    h = conv(p + "c3", h, {0, 1, 1});
    h = conv(p + "c4", h, {0, 0, 0});
    return ad::sigmoid(h);
  }

  /// [C,T,H,W] -> [1,T,H,W] sigmoid weights over space.
  ad::Var spatial_attention(const std::string& prefix, const ad::Var& x) const {
    return ad::sigmoid(conv(prefix + ".satt.c1", pooled_maps(x), {0, 3, 3}));
  }

  ad::Var cnn_forward(const std::string& prefix, const ad::Var& x, StageTrace* trace = nullptr) const {
    const Shape want{3, cfg_.frames, cfg_.side, cfg_.side};
    if (x.shape() != want) {
      throw ShapeError(prefix + ": expected input " + shape_str(want) + ", got " + shape_str(x.shape()));
    }
    auto note = [&](const char* stage, const ad::Var& v) {
      if (trace) trace->emplace_back(prefix + "." + stage, v.shape());
    };
    const Triple same{1, 1, 1};
    auto h = ad::relu(conv(prefix + ".conv1", x, same));
    note("conv1", h);
    h = ad::broadcast_mul(h, temporal_attention(prefix, h));
    h = ad::broadcast_mul(h, spatial_attention(prefix, h));
    note("attention", h);
    h = ad::pool3d(h, {1, 2, 2}, PoolMode::kMax);
    note("pool1", h);
    h = ad::relu(conv(prefix + ".conv2", h, same));
    note("conv2", h);
    h = ad::pool3d(h, {2, 2, 2}, PoolMode::kMax);
    note("pool2", h);
    h = ad::relu(conv(prefix + ".conv3", h, same));
    note("conv3", h);
    h = ad::relu(conv(prefix + ".conv4", h, same));
    note("conv4", h);
    h = ad::pool3d(h, {2, 2, 2}, PoolMode::kMax);
    note("pool3", h);
    // No ReLU here: a non-negative embedding would keep every cosine >= 0.
    h = conv(prefix + ".conv5", h, same);
    note("conv5", h);
    h = ad::mean_per_channel(h);
    note("embedding", h);
    return h;
  }

  /// x [T,D] -> final hidden state [H]. Gates are ordered i, f, g, o.
  ad::Var lstm_forward(const std::string& prefix, const ad::Var& x) const {
    const auto& wx = params_.get(prefix + ".lstm.wx");
    const auto& wh = params_.get(prefix + ".lstm.wh");
    const auto& b = params_.get(prefix + ".lstm.b");
    const std::size_t H = cfg_.hidden;
    if (x.shape().size() != 2 || x.shape()[1] != wx.shape()[0]) {
      throw ShapeError(prefix + ": expected input [T," + std::to_string(wx.shape()[0]) + "], got " +
                       shape_str(x.shape()));
    }
    const auto xproj = ad::matmul(x, wx);  // [T,4H]
    LstmState st{ad::constant(Tensor(Shape{H})), ad::constant(Tensor(Shape{H}))};
    for (std::size_t t = 0; t < x.shape()[0]; ++t) st = lstm_cell(ad::select(xproj, t), st, wh, b);
    return st.h;
  }

  /// Clip streams are standardized per channel before the CNN.
  ad::Var embed(Stream s, const Tensor& input, StageTrace* trace = nullptr) const {
    if (is_clip_stream(s)) return cnn_forward(stream_name(s), ad::constant(standardize_channels(input)), trace);
    return lstm_forward(stream_name(s), ad::constant(input));
  }

  /// Concatenates the embeddings in config order and returns the logit [1].
  ad::Var head(const std::vector<ad::Var>& embeddings) const {
    if (embeddings.size() != cfg_.streams.size()) {
      throw ConfigError("head expects " + std::to_string(cfg_.streams.size()) + " embeddings, got " +
                        std::to_string(embeddings.size()));
    }
    const auto z = ad::concat(embeddings, 0);
    const auto h = ad::relu(ad::linear(params_.get("fusion.fc1.w"), z, params_.get("fusion.fc1.b")));
    return ad::linear(params_.get("fusion.fc2.w"), h, params_.get("fusion.fc2.b"));
  }

  ForwardResult forward(const Features& features, StageTrace* trace = nullptr) const {
    ForwardResult r;
    for (Stream s : cfg_.streams) {
      auto it = features.find(s);
      if (it == features.end()) throw DataError("missing stream " + stream_name(s));
      r.embeddings.push_back(embed(s, it->second, trace));
    }
    r.logit = head(r.embeddings);
    r.prob = ad::sigmoid_value(r.logit.value()[0]);
    if (trace) trace->emplace_back("fusion.logit", r.logit.shape());
    return r;
  }

  std::vector<io::NamedTensor> state() const {
    std::vector<io::NamedTensor> out;
    for (const auto& e : params_.entries()) out.push_back({e.name, e.var.value()});
    return out;
  }

  /// Replaces every parameter; names and shapes must match exactly.
  void load_state(const std::vector<io::NamedTensor>& state) {
    if (state.size() != params_.size()) {
      throw FormatError("checkpoint has " + std::to_string(state.size()) + " tensors, network has " +
                        std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < state.size(); ++i) {
      if (state[i].name != params_.entries()[i].name) {
        throw FormatError("checkpoint tensor " + std::to_string(i) + " is '" + state[i].name +
                          "', expected '" + params_.entries()[i].name + "'");
      }
      params_.assign(state[i].name, state[i].tensor);
    }
  }

  void save(const std::filesystem::path& path) const { io::save_weights(path, state()); }
  void load(const std::filesystem::path& path) { load_state(io::load_weights(path)); }

 private:
  ad::Var conv(const std::string& name, const ad::Var& x, Triple pad) const {
    return ad::conv3d(x, params_.get(name + ".w"), params_.get(name + ".b"), pad);
  }

  static ad::Var pooled_maps(const ad::Var& x) {
    return ad::concat({ad::reduce_channels(x, PoolMode::kMean), ad::reduce_channels(x, PoolMode::kMax)}, 0);
  }

  static double glorot(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  }

  void add_conv(const std::string& name, std::size_t cin, std::size_t cout, Triple k, std::mt19937_64& rng) {
    const std::size_t vol = k.t * k.h * k.w;
    const double a = glorot(cin * vol, cout * vol);
    params_.add(name + ".w", Tensor::uniform({cout, cin, k.t, k.h, k.w}, -a, a, rng));
    params_.add(name + ".b", Tensor(Shape{cout}));
  }

  void add_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double a = glorot(in, out);
    params_.add(name + ".w", Tensor::uniform({out, in}, -a, a, rng));
    params_.add(name + ".b", Tensor(Shape{out}));
  }

  void add_cnn(const std::string& p, std::mt19937_64& rng) {
    const auto& w = cfg_.widths;
    const std::size_t A = cfg_.attention_channels;
    const Triple k3{3, 3, 3};
    add_conv(p + ".conv1", 3, w[0], k3, rng);
    add_conv(p + ".tatt.c1", 2, A, k3, rng);
    add_conv(p + ".tatt.c2", A, A, k3, rng);
    add_conv(p + ".tatt.c3", A, A, {1, 3, 3}, rng);
    add_conv(p + ".tatt.c4", A, 1, {1, cfg_.side, cfg_.side}, rng);
    add_conv(p + ".satt.c1", 2, 1, {1, 7, 7}, rng);
    add_conv(p + ".conv2", w[0], w[1], k3, rng);
    add_conv(p + ".conv3", w[1], w[2], k3, rng);
    add_conv(p + ".conv4", w[2], w[3], k3, rng);
    add_conv(p + ".conv5", w[3], w[4], k3, rng);
  }

  void add_lstm(const std::string& p, std::size_t in, std::mt19937_64& rng) {
    const std::size_t H = cfg_.hidden;
    const double ax = glorot(in, 4 * H);
    const double ah = glorot(H, 4 * H);
    params_.add(p + ".lstm.wx", Tensor::uniform({in, 4 * H}, -ax, ax, rng));
    params_.add(p + ".lstm.wh", Tensor::uniform({4 * H, H}, -ah, ah, rng));
    params_.add(p + ".lstm.b", Tensor(Shape{4 * H}));
  }

  NetworkConfig cfg_;
  ParamStore params_;
};

}  // namespace sffda
