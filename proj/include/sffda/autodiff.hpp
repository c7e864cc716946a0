// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sffda/kernels.hpp"
#include "sffda/tensor.hpp"

// Reverse-mode automatic differentiation over a DAG of tensor-valued nodes.
//
// Every operation produces a new node; inputs are never modified. A node
// records a backward closure only when at least one parent requires a
// gradient, so graphs over constant inputs cost nothing extra.
namespace sffda::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool trainable = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g) {
    if (!g.same_shape(value)) {
      throw ShapeError(std::string("gradient shape ") + shape_str(g.shape()) +
                       " does not match value " + shape_str(value.shape()) + " at " + op);
    }
    if (grad.empty()) {
      grad = g;
      return;
    }
    auto dst = grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Gradient, or zeros when nothing has been accumulated yet.
  Tensor grad_or_zero() const { return grad.empty() ? Tensor(value.shape()) : grad; }

  void zero_grad() { grad = Tensor(); }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Tensor grad() const { return node_->grad_or_zero(); }
  bool requires_grad() const { return node_->requires_grad; }
  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

/// Leaf without gradient tracking.
inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

/// Trainable leaf.
inline Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  n->trainable = true;
  return Var(std::move(n));
}

namespace detail {

template <class Backward>
Var make_node(const char* op, Tensor value, std::vector<NodePtr> parents, Backward&& fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (const auto& p : parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::forward<Backward>(fn);
  }
  return Var(std::move(n));
}

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
}

template <class F, class D>
Var unary(const char* op, const Var& a, F f, D dfdx) {
  Tensor out(a.shape());
  const auto& in = a.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  NodePtr pa = a.node();
  return make_node(op, std::move(out), {pa}, [pa, dfdx](Node& self) {
    Tensor g(pa->value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = self.grad[i] * dfdx(pa->value[i], self.value[i]);
    }
    pa->accumulate(g);
  });
}

}  // namespace detail

/// Reverse-mode sweep from a scalar node. Gradients accumulate into every
/// node that requires one; trainable leaves keep theirs until zero_grad().
inline void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Tensor(loss.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  NodePtr pa = a.node(), pb = b.node();
  return detail::make_node("add", std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  NodePtr pa = a.node(), pb = b.node();
  return detail::make_node("sub", std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i];
      pb->accumulate(g);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  NodePtr pa = a.node(), pb = b.node();
  return detail::make_node("mul", std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * pb->value[i];
      pa->accumulate(g);
    }
    if (pb->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * pa->value[i];
      pb->accumulate(g);
    }
  });
}

inline Var scale(const Var& a, double s) {
  return detail::unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(const Var& a, double s) {
  return detail::unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double x) {
  // Split on sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  return detail::unary("sigmoid", a, sigmoid_value,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

/// |x| with subgradient 0 at the origin.
inline Var abs(const Var& a) {
  return detail::unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  NodePtr pa = a.node();
  return detail::make_node("sum", Tensor::scalar(s), {pa}, [pa](Node& self) {
    pa->accumulate(Tensor(pa->value.shape(), self.grad[0]));
  });
}

inline Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  NodePtr pa = a.node();
  return detail::make_node("reshape", std::move(out), {pa}, [pa](Node& self) {
    pa->accumulate(self.grad.reshaped(pa->value.shape()));
  });
}

/// Concatenation along `axis`; all other extents must agree.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  Tensor out(out_shape);
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.value().data().begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.data().begin() +
                      static_cast<std::ptrdiff_t>(o * out_shape[axis] * inner + offset));
    }
    nodes.push_back(p.node());
    offsets.push_back(offset);
    offset += block;
  }
  const std::size_t row = out_shape[axis] * inner;
  return detail::make_node(
      "concat", std::move(out), nodes, [nodes, offsets, outer, inner, row, axis](Node& self) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (!nodes[k]->requires_grad) continue;
          Tensor g(nodes[k]->value.shape());
          const std::size_t block = g.shape()[axis] * inner;
          for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(self.grad.data().begin() + static_cast<std::ptrdiff_t>(o * row + offsets[k]),
                        block, g.data().begin() + static_cast<std::ptrdiff_t>(o * block));
          }
          nodes[k]->accumulate(g);
        }
      });
}

/// Sub-range [start, start+count) along axis 0.
inline Var slice(const Var& a, std::size_t start, std::size_t count) {
  const Shape& s = a.shape();
  if (s.empty() || count == 0 || start + count > s[0]) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") out of bounds for " + shape_str(s));
  }
  const std::size_t inner = a.value().size() / s[0];
  Shape out_shape = s;
  out_shape[0] = count;
  Tensor out(out_shape);
  const auto begin = a.value().data().begin() + static_cast<std::ptrdiff_t>(start * inner);
  std::copy_n(begin, count * inner, out.data().begin());
  NodePtr pa = a.node();
  return detail::make_node("slice", std::move(out), {pa}, [pa, start, inner](Node& self) {
    Tensor g(pa->value.shape());
    std::copy(self.grad.data().begin(), self.grad.data().end(),
              g.data().begin() + static_cast<std::ptrdiff_t>(start * inner));
    pa->accumulate(g);
  });
}

/// Index `i` along axis 0, dropping that axis (rank-1 input gives a [1] tensor).
inline Var select(const Var& a, std::size_t i) {
  Var row = slice(a, i, 1);
  Shape s(a.shape().begin() + 1, a.shape().end());
  if (s.empty()) s = {1};
  return reshape(row, std::move(s));
}

/// Mean or max over axis 0, keeping it as extent 1: [C, ...] -> [1, ...].
inline Var reduce_channels(const Var& a, PoolMode mode) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("reduce_channels: need rank >= 2, got " + shape_str(s));
  const std::size_t C = s[0];
  const std::size_t inner = a.value().size() / C;
  Shape out_shape = s;
  out_shape[0] = 1;
  Tensor out(out_shape);
  std::vector<std::size_t> arg(mode == PoolMode::kMax ? inner : 0);
  const auto& x = a.value();
  for (std::size_t i = 0; i < inner; ++i) {
    if (mode == PoolMode::kMean) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) acc += x[c * inner + i];
      out[i] = acc / static_cast<double>(C);
    } else {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c) {
        if (x[c * inner + i] > x[best * inner + i]) best = c;
      }
      arg[i] = best;
      out[i] = x[best * inner + i];
    }
  }
  NodePtr pa = a.node();
  return detail::make_node(
      mode == PoolMode::kMax ? "channel_max" : "channel_mean", std::move(out), {pa},
      [pa, mode, C, inner, arg = std::move(arg)](Node& self) {
        Tensor g(pa->value.shape());
        for (std::size_t i = 0; i < inner; ++i) {
          if (mode == PoolMode::kMean) {
            const double v = self.grad[i] / static_cast<double>(C);
            for (std::size_t c = 0; c < C; ++c) g[c * inner + i] = v;
          } else {
            g[arg[i] * inner + i] = self.grad[i];
          }
        }
        pa->accumulate(g);
      });
}

/// Average over every axis but the first: [C, ...] -> [C].
inline Var mean_per_channel(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("mean_per_channel: need rank >= 2, got " + shape_str(s));
  const std::size_t C = s[0];
  const std::size_t inner = a.value().size() / C;
  Tensor out(Shape{C});
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < inner; ++i) acc += a.value()[c * inner + i];
    out[c] = acc / static_cast<double>(inner);
  }
  NodePtr pa = a.node();
  return detail::make_node("mean_per_channel", std::move(out), {pa}, [pa, C, inner](Node& self) {
    Tensor g(pa->value.shape());
    for (std::size_t c = 0; c < C; ++c) {
      const double v = self.grad[c] / static_cast<double>(inner);
      std::fill_n(g.data().begin() + static_cast<std::ptrdiff_t>(c * inner), inner, v);
    }
    pa->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const auto m = static_cast<Eigen::Index>(sa[0]);
  const auto k = static_cast<Eigen::Index>(sa[1]);
  const auto n = static_cast<Eigen::Index>(sb[1]);
  Tensor out(Shape{sa[0], sb[1]});
  kernels::MatrixMap(out.data().data(), m, n).noalias() =
      kernels::ConstMatrixMap(a.value().data().data(), m, k) *
      kernels::ConstMatrixMap(b.value().data().data(), k, n);
  NodePtr pa = a.node(), pb = b.node();
  return detail::make_node("matmul", std::move(out), {pa, pb}, [pa, pb, m, k, n](Node& self) {
    kernels::ConstMatrixMap dy(self.grad.data().data(), m, n);
    if (pa->requires_grad) {
      Tensor g(pa->value.shape());
      kernels::MatrixMap(g.data().data(), m, k).noalias() =
          dy * kernels::ConstMatrixMap(pb->value.data().data(), k, n).transpose();
      pa->accumulate(g);
    }
    if (pb->requires_grad) {
      Tensor g(pb->value.shape());
      kernels::MatrixMap(g.data().data(), k, n).noalias() =
          kernels::ConstMatrixMap(pa->value.data().data(), m, k).transpose() * dy;
      pb->accumulate(g);
    }
  });
}

/// Affine map y = W x + b with W [m,k], x [k], b [m].
inline Var linear(const Var& w, const Var& x, const Var& b) {
  const Shape& sw = w.shape();
  if (sw.size() != 2 || x.shape().size() != 1 || x.shape()[0] != sw[1] ||
      b.shape() != Shape{sw[0]}) {
    throw ShapeError("linear: incompatible shapes W" + shape_str(sw) + " x" +
                     shape_str(x.shape()) + " b" + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(sw[0]);
  const auto k = static_cast<Eigen::Index>(sw[1]);
  using Vec = Eigen::Map<Eigen::VectorXd>;
  using ConstVec = Eigen::Map<const Eigen::VectorXd>;
  Tensor out(Shape{sw[0]});
  Vec(out.data().data(), m).noalias() =
      kernels::ConstMatrixMap(w.value().data().data(), m, k) *
          ConstVec(x.value().data().data(), k) +
      ConstVec(b.value().data().data(), m);
  NodePtr pw = w.node(), px = x.node(), pb = b.node();
  return detail::make_node("linear", std::move(out), {pw, px, pb}, [pw, px, pb, m, k](Node& self) {
    ConstVec dy(self.grad.data().data(), m);
    if (pw->requires_grad) {
      Tensor g(pw->value.shape());
      kernels::MatrixMap(g.data().data(), m, k).noalias() =
          dy * ConstVec(px->value.data().data(), k).transpose();
      pw->accumulate(g);
    }
    if (px->requires_grad) {
      Tensor g(px->value.shape());
      Vec(g.data().data(), k).noalias() =
          kernels::ConstMatrixMap(pw->value.data().data(), m, k).transpose() * dy;
      px->accumulate(g);
    }
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

/// X * W with W broadcast over the axes it lacks. W is aligned to the
/// trailing axes of X; each aligned extent of W must be 1 or equal to X's.
inline Var broadcast_mul(const Var& x, const Var& w) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sw.size() > sx.size()) {
    throw ShapeError("broadcast_mul: weight rank exceeds input rank: " + shape_str(sx) +
                     " vs " + shape_str(sw));
  }
  const std::size_t lead = sx.size() - sw.size();
  // Stride into W for each axis of X (0 where W broadcasts).
  std::vector<std::size_t> wstride(sx.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = sw.size(); d-- > 0;) {
    const std::size_t xd = lead + d;
    if (sw[d] != sx[xd] && sw[d] != 1) {
      throw ShapeError("broadcast_mul: incompatible shapes " + shape_str(sx) + " and " +
                       shape_str(sw));
    }
    wstride[xd] = sw[d] == 1 ? 0 : stride;
    stride *= sw[d];
  }
  std::vector<std::size_t> windex(x.value().size());
  {
    std::vector<std::size_t> idx(sx.size(), 0);
    std::size_t woff = 0;
    for (std::size_t i = 0; i < windex.size(); ++i) {
      windex[i] = woff;
      for (std::size_t d = sx.size(); d-- > 0;) {
        ++idx[d];
        woff += wstride[d];
        if (idx[d] < sx[d]) break;
        woff -= wstride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  Tensor out(sx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * w.value()[windex[i]];
  NodePtr px = x.node(), pw = w.node();
  return detail::make_node("broadcast_mul", std::move(out), {px, pw},
                           [px, pw, windex = std::move(windex)](Node& self) {
                             if (px->requires_grad) {
                               Tensor g(px->value.shape());
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 g[i] = self.grad[i] * pw->value[windex[i]];
                               }
                               px->accumulate(g);
                             }
                             if (pw->requires_grad) {
                               Tensor g(pw->value.shape());
                               for (std::size_t i = 0; i < windex.size(); ++i) {
                                 g[windex[i]] += self.grad[i] * px->value[i];
                               }
                               pw->accumulate(g);
                             }
                           });
}

// ---------------------------------------------------------------------------
// Volumetric layers

inline Var conv3d(const Var& x, const Var& kernel, const Var& bias, Triple pad) {
  Tensor out = kernels::conv3d_forward(x.value(), kernel.value(), bias.value(), pad);
  NodePtr px = x.node(), pk = kernel.node(), pb = bias.node();
  return detail::make_node("conv3d", std::move(out), {px, pk, pb}, [px, pk, pb, pad](Node& self) {
    const bool want_params = pk->requires_grad || pb->requires_grad;
    auto g = kernels::conv3d_backward(px->value, pk->value, pb->value, pad, self.grad,
                                      px->requires_grad, want_params);
    if (px->requires_grad) px->accumulate(g.input);
    if (pk->requires_grad) pk->accumulate(g.kernel);
    if (pb->requires_grad) pb->accumulate(g.bias);
  });
}

inline Var pool3d(const Var& x, Triple window, PoolMode mode) {
  std::vector<std::size_t> argmax;
  Tensor out = kernels::pool3d_forward(x.value(), window, mode,
                                       mode == PoolMode::kMax ? &argmax : nullptr);
  NodePtr px = x.node();
  return detail::make_node(
      mode == PoolMode::kMax ? "maxpool3d" : "meanpool3d", std::move(out), {px},
      [px, window, mode, argmax = std::move(argmax)](Node& self) {
        Tensor g(px->value.shape());
        if (mode == PoolMode::kMax) {
          for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
        } else {
          const Shape& s = px->value.shape();
          const std::size_t T = s[1], H = s[2], W = s[3];
          const Shape& os = self.value.shape();
          const double inv = 1.0 / static_cast<double>(window.t * window.h * window.w);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t w = i % W;
            const std::size_t h = (i / W) % H;
            const std::size_t t = (i / (W * H)) % T;
            const std::size_t c = i / (W * H * T);
            const std::size_t o =
                ((c * os[1] + t / window.t) * os[2] + h / window.h) * os[3] + w / window.w;
            g[i] = self.grad[o] * inv;
          }
        }
        px->accumulate(g);
      });
}

// ---------------------------------------------------------------------------
// Losses and similarity

/// Cosine of the angle between two vectors of equal length, as a [1] tensor.
/// A zero-norm argument yields 0 with no gradient contribution. Equal
/// arguments give exactly 1 and a zero gradient (its exact value there).
inline Var cosine(const Var& a, const Var& b) {
  detail::require_same_shape("cosine", a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  nx = std::sqrt(nx);
  ny = std::sqrt(ny);
  const bool degenerate = nx == 0.0 || ny == 0.0;
  const bool equal = !degenerate && x.values() == y.values();
  const double cos = degenerate ? 0.0 : equal ? 1.0 : std::clamp(dot / (nx * ny), -1.0, 1.0);
  NodePtr pa = a.node(), pb = b.node();
  return detail::make_node(
      "cosine", Tensor::scalar(cos), {pa, pb}, [pa, pb, nx, ny, cos, degenerate, equal](Node& self) {
        if (degenerate || equal) return;
        const double up = self.grad[0];
        const auto& x = pa->value;
        const auto& y = pb->value;
        if (pa->requires_grad) {
          Tensor g(x.shape());
          for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = up * (y[i] / (nx * ny) - cos * x[i] / (nx * nx));
          }
          pa->accumulate(g);
        }
        if (pb->requires_grad) {
          Tensor g(y.shape());
          for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = up * (x[i] / (nx * ny) - cos * y[i] / (ny * ny));
          }
          pb->accumulate(g);
        }
      });
}

inline constexpr double kProbClamp = 1e-12;

/// Binary cross-entropy of sigmoid(logit) against `label`, with the
/// probability clamped to [1e-12, 1 - 1e-12]. The gradient is the exact
/// derivative with respect to the logit, sigmoid(logit) - label, which
/// agrees with the clamped value wherever the clamp is inactive.
inline Var bce_with_logit(const Var& logit, double label) {
  if (logit.value().size() != 1) {
    throw ShapeError("bce_with_logit: logit must be scalar, got " + shape_str(logit.shape()));
  }
  const double p = sigmoid_value(logit.value()[0]);
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const double loss = -(label * std::log(pc) + (1.0 - label) * std::log(1.0 - pc));
  NodePtr pl = logit.node();
  return detail::make_node("bce", Tensor::scalar(loss), {pl}, [pl, p, label](Node& self) {
    pl->accumulate(Tensor::scalar(self.grad[0] * (p - label)));
  });
}

}  // namespace sffda::ad
