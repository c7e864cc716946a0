// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sffda/autodiff.hpp"

namespace sffda {

/// Named trainable tensors in insertion order. Insertion order is the
/// checkpoint order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Var var;
  };

  const ad::Var& add(std::string name, Tensor init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), ad::parameter(std::move(init))});
    return entries_.back().var;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  const ad::Var& get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
    return entries_[it->second].var;
  }

  /// Overwrites a parameter value in place; the shape must not change.
  void assign(std::string_view name, const Tensor& value) {
    const ad::Var& v = get(name);
    if (!value.same_shape(v.value())) {
      throw ShapeError("parameter " + std::string(name) + " has shape " +
                       shape_str(v.shape()) + ", got " + shape_str(value.shape()));
    }
    v.node()->value = value;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.node()->zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `param` in place. `step` is the
/// 1-based update count after incrementing.
inline void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                        std::uint64_t step, const AdamConfig& cfg) {
  if (!grad.same_shape(param) || !m.same_shape(param) || !v.same_shape(param)) {
    throw ShapeError("adam_update: shape mismatch for parameter " + shape_str(param.shape()));
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// Adam over a ParamStore. Parameters that received no gradient in a step
/// are left untouched.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t steps() const { return step_; }

  void step(ParamStore& params) {
    ++step_;
    for (const auto& e : params.entries()) {
      ad::Node& n = *e.var.node();
      if (n.grad.empty()) continue;
      auto [it, fresh] = moments_.try_emplace(e.name);
      if (fresh) it->second = {Tensor(n.value.shape()), Tensor(n.value.shape())};
      adam_update(n.value, n.grad, it->second.first, it->second.second, step_, cfg_);
    }
  }

  /// Moment tensors keyed by parameter name: (first, second).
  const std::map<std::string, std::pair<Tensor, Tensor>>& moments() const { return moments_; }

  void restore(std::uint64_t step, std::map<std::string, std::pair<Tensor, Tensor>> moments) {
    step_ = step;
    moments_ = std::move(moments);
  }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace sffda
