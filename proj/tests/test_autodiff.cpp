// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "support.hpp"

using namespace sffda;
using testing_support::grad_check;

namespace {

constexpr int kSeeds = 20;
constexpr double kTol = 1e-4;

using Build = std::function<ad::Var(const std::vector<ad::Var>&)>;

/// Gradient check of sum(op(inputs) * R) for a fixed random R, over kSeeds
/// seeds. `make` draws the input tensors for one seed.
void check_op(const char* name, const std::function<std::vector<Tensor>(std::mt19937_64&)>& make,
              const Build& op) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 7919 + 1);
    std::vector<std::pair<std::string, ad::Var>> leaves;
    std::vector<ad::Var> vars;
    for (auto& t : make(rng)) {
      vars.push_back(ad::parameter(std::move(t)));
      leaves.emplace_back("in" + std::to_string(leaves.size()), vars.back());
    }
    const Tensor r = Tensor::uniform(op(vars).shape(), -1.0, 1.0, rng);
    auto loss = [&] { return ad::sum(ad::mul(op(vars), ad::constant(r))); };
    const auto res = grad_check(loss, leaves, 0, rng);
    ASSERT_LE(res.max_rel_error, kTol) << name << " seed " << seed << ": " << res.worst;
  }
}

std::function<std::vector<Tensor>(std::mt19937_64&)> shapes(std::vector<Shape> s, double lo = -1.0, double hi = 1.0) {
  return [s, lo, hi](std::mt19937_64& rng) {
    std::vector<Tensor> out;
    for (const auto& sh : s) out.push_back(Tensor::uniform(sh, lo, hi, rng));
    return out;
  };
}

}  // namespace

TEST(Autodiff, SigmoidAtZero) {
  auto w = ad::parameter(Tensor::scalar(0.0));
  auto y = ad::sigmoid(w);
  EXPECT_EQ(y.value()[0], 0.5);
  ad::backward(y);
  EXPECT_EQ(w.grad()[0], 0.25);
}

TEST(Autodiff, SumGivesOnes) {
  auto w = ad::parameter(Tensor(Shape{2, 3, 2}, 0.7));
  ad::backward(ad::sum(w));
  const Tensor g = w.grad();
  for (double v : g.data()) EXPECT_EQ(v, 1.0);
}

TEST(Autodiff, SharedSubexpressionsAccumulate) {
  auto x = ad::parameter(Tensor::scalar(3.0));
  ad::backward(ad::add(x, x));
  EXPECT_EQ(x.grad()[0], 2.0);

  auto y = ad::parameter(Tensor::scalar(1.5));
  auto s = ad::mul(y, y);
  ad::backward(ad::add(s, ad::scale(s, 2.0)));  // 3 y^2
  EXPECT_DOUBLE_EQ(y.grad()[0], 9.0);
}

TEST(Autodiff, NonScalarLossRejected) {
  auto x = ad::parameter(Tensor(Shape{2}, 1.0));
  EXPECT_THROW(ad::backward(x), ShapeError);
}

TEST(Autodiff, ConstantsGetNoGradient) {
  auto c = ad::constant(Tensor(Shape{3}, 2.0));
  auto p = ad::parameter(Tensor(Shape{3}, 1.0));
  ad::backward(ad::sum(ad::mul(c, p)));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_TRUE(c.node()->grad.empty());
  const Tensor g = p.grad();
  for (double v : g.data()) EXPECT_EQ(v, 2.0);
}

TEST(Autodiff, BroadcastMulWithOnesIsIdentity) {
  std::mt19937_64 rng(5);
  auto x = ad::constant(Tensor::uniform({2, 3}, -1, 1, rng));
  auto y = ad::broadcast_mul(x, ad::constant(Tensor(Shape{3}, 1.0)));
  EXPECT_EQ(y.value(), x.value());
}

TEST(Autodiff, BroadcastMulMatchesManualLoop) {
  std::mt19937_64 rng(6);
  const Tensor x = Tensor::uniform({2, 3, 4, 5}, -1, 1, rng);
  const Tensor w = Tensor::uniform({1, 3, 1, 1}, -1, 1, rng);
  const Tensor y = ad::broadcast_mul(ad::constant(x), ad::constant(w)).value();
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t d = 0; d < 5; ++d) EXPECT_EQ(y.at({a, b, c, d}), x.at({a, b, c, d}) * w.at({0, b, 0, 0}));
  EXPECT_THROW(ad::broadcast_mul(ad::constant(x), ad::constant(Tensor(Shape{2, 1, 1}))), ShapeError);
}

TEST(Autodiff, MatmulMatchesTripleLoop) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = Tensor::uniform({2, 3}, -1, 1, rng);
    const Tensor b = Tensor::uniform({3, 2}, -1, 1, rng);
    const Tensor c = ad::matmul(ad::constant(a), ad::constant(b)).value();
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 3; ++k) acc += a.at({i, k}) * b.at({k, j});
        EXPECT_NEAR(c.at({i, j}), acc, 1e-15);
      }
  }
  EXPECT_THROW(ad::matmul(ad::constant(Tensor(Shape{2, 3})), ad::constant(Tensor(Shape{2, 3}))), ShapeError);
}

TEST(Autodiff, LinearMatchesLoop) {
  std::mt19937_64 rng(12);
  const Tensor w = Tensor::uniform({4, 3}, -1, 1, rng);
  const Tensor x = Tensor::uniform({3}, -1, 1, rng);
  const Tensor b = Tensor::uniform({4}, -1, 1, rng);
  const Tensor y = ad::linear(ad::constant(w), ad::constant(x), ad::constant(b)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    double acc = b[i];
    for (std::size_t k = 0; k < 3; ++k) acc += w.at({i, k}) * x[k];
    EXPECT_NEAR(y[i], acc, 1e-15);
  }
}

TEST(Autodiff, ConcatSliceSelect) {
  auto a = ad::constant(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3, 4}));
  auto b = ad::constant(Tensor(Shape{2, 1}, std::vector<double>{5, 6}));
  EXPECT_EQ(ad::concat({a, b}, 1).value().values(), (std::vector<double>{1, 2, 5, 3, 4, 6}));
  EXPECT_EQ(ad::concat({a, a}, 0).value().shape(), (Shape{4, 2}));
  EXPECT_THROW(ad::concat({a, b}, 0), ShapeError);
  EXPECT_EQ(ad::select(a, 1).value().values(), (std::vector<double>{3, 4}));
  auto v = ad::constant(Tensor::vector({1, 2, 3, 4, 5}));
  EXPECT_EQ(ad::slice(v, 1, 3).value().values(), (std::vector<double>{2, 3, 4}));
  EXPECT_THROW(ad::slice(v, 4, 2), ShapeError);
}

TEST(Autodiff, OperationsArePure) {
  std::mt19937_64 rng(13);
  const Tensor x0 = Tensor::uniform({3, 4}, -1, 1, rng);
  const Tensor w0 = Tensor::uniform({4, 2}, -1, 1, rng);
  auto x = ad::parameter(x0);
  auto w = ad::parameter(w0);
  auto f = [&] { return ad::sum(ad::tanh(ad::matmul(ad::relu(x), w))); };
  const auto y1 = f();
  ad::backward(y1);
  const auto y2 = f();
  EXPECT_EQ(x.value(), x0);
  EXPECT_EQ(w.value(), w0);
  EXPECT_EQ(y1.value(), y2.value());
}

TEST(GradCheck, Elementwise) {
  check_op("add", shapes({{3, 4}, {3, 4}}), [](auto& v) { return ad::add(v[0], v[1]); });
  check_op("sub", shapes({{3, 4}, {3, 4}}), [](auto& v) { return ad::sub(v[0], v[1]); });
  check_op("mul", shapes({{3, 4}, {3, 4}}), [](auto& v) { return ad::mul(v[0], v[1]); });
  check_op("scale", shapes({{5}}), [](auto& v) { return ad::scale(v[0], -1.7); });
  check_op("add_scalar", shapes({{5}}), [](auto& v) { return ad::add_scalar(v[0], 0.3); });
  check_op("relu", shapes({{4, 5}}), [](auto& v) { return ad::relu(v[0]); });
  check_op("sigmoid", shapes({{4, 5}}, -4, 4), [](auto& v) { return ad::sigmoid(v[0]); });
  check_op("tanh", shapes({{4, 5}}, -3, 3), [](auto& v) { return ad::tanh(v[0]); });
  check_op("abs", shapes({{4, 5}}), [](auto& v) { return ad::abs(v[0]); });
}

TEST(GradCheck, ReductionsAndReshaping) {
  check_op("sum", shapes({{3, 4}}), [](auto& v) { return ad::sum(v[0]); });
  check_op("mean", shapes({{3, 4}}), [](auto& v) { return ad::mean(v[0]); });
  check_op("reshape", shapes({{3, 4}}), [](auto& v) { return ad::reshape(v[0], {2, 6}); });
  check_op("concat0", shapes({{2, 3}, {1, 3}}), [](auto& v) { return ad::concat({v[0], v[1]}, 0); });
  check_op("concat1", shapes({{2, 3}, {2, 2}}), [](auto& v) { return ad::concat({v[0], v[1]}, 1); });
  check_op("slice", shapes({{6, 2}}), [](auto& v) { return ad::slice(v[0], 2, 3); });
  check_op("select", shapes({{4, 3}}), [](auto& v) { return ad::select(v[0], 2); });
  check_op("channel_mean", shapes({{3, 2, 4, 4}}), [](auto& v) { return ad::reduce_channels(v[0], PoolMode::kMean); });
  check_op("channel_max", shapes({{3, 2, 4, 4}}), [](auto& v) { return ad::reduce_channels(v[0], PoolMode::kMax); });
  check_op("mean_per_channel", shapes({{3, 2, 2, 2}}), [](auto& v) { return ad::mean_per_channel(v[0]); });
}

TEST(GradCheck, LinearAlgebra) {
  check_op("matmul", shapes({{3, 4}, {4, 2}}), [](auto& v) { return ad::matmul(v[0], v[1]); });
  check_op("linear", shapes({{5, 4}, {4}, {5}}), [](auto& v) { return ad::linear(v[0], v[1], v[2]); });
  check_op("broadcast_mul", shapes({{2, 3, 4, 4}, {1, 3, 1, 1}}),
           [](auto& v) { return ad::broadcast_mul(v[0], v[1]); });
  check_op("broadcast_mul_spatial", shapes({{2, 2, 3, 3}, {1, 2, 3, 3}}),
           [](auto& v) { return ad::broadcast_mul(v[0], v[1]); });
}

TEST(GradCheck, VolumetricLayers) {
  check_op("conv3d", shapes({{2, 4, 5, 5}, {3, 2, 3, 3, 3}, {3}}),
           [](auto& v) { return ad::conv3d(v[0], v[1], v[2], {1, 1, 1}); });
  check_op("conv3d_nopad", shapes({{2, 3, 4, 4}, {2, 2, 1, 3, 3}, {2}}),
           [](auto& v) { return ad::conv3d(v[0], v[1], v[2], {0, 0, 0}); });
  check_op("conv3d_full_plane", shapes({{2, 3, 4, 4}, {1, 2, 1, 4, 4}, {1}}),
           [](auto& v) { return ad::conv3d(v[0], v[1], v[2], {0, 0, 0}); });
  check_op("maxpool", shapes({{2, 4, 4, 4}}), [](auto& v) { return ad::pool3d(v[0], {2, 2, 2}, PoolMode::kMax); });
  check_op("meanpool", shapes({{2, 4, 4, 4}}), [](auto& v) { return ad::pool3d(v[0], {1, 2, 2}, PoolMode::kMean); });
}

TEST(GradCheck, LossesAndSimilarity) {
  check_op("cosine", shapes({{6}, {6}}), [](auto& v) { return ad::cosine(v[0], v[1]); });
  check_op("bce_pos", shapes({{1}}, -3, 3), [](auto& v) { return ad::bce_with_logit(v[0], 1.0); });
  check_op("bce_neg", shapes({{1}}, -3, 3), [](auto& v) { return ad::bce_with_logit(v[0], 0.0); });
}

TEST(GradCheck, LstmStep) {
  check_op("lstm_step", shapes({{5}, {3}, {3}, {5, 12}, {12, 3}, {12}}), [](auto& v) {
    const auto s = lstm_step(v[0], {v[1], v[2]}, v[3], v[4], v[5]);
    return ad::concat({s.h, s.c}, 0);
  });
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamStore ps;
  ps.add("w", Tensor(Shape{3}, std::vector<double>{1, -2, 3}));
  ps.get("w").node()->accumulate(Tensor(Shape{3}));
  Adam opt;
  opt.step(ps);
  EXPECT_EQ(ps.get("w").value().values(), (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore ps;
  ps.add("w", Tensor::scalar(0.5));
  ps.get("w").node()->accumulate(Tensor::scalar(1.0));
  Adam opt;
  opt.step(ps);
  EXPECT_NEAR(ps.get("w").value()[0], 0.5 - 1e-4, 1e-11);
}

TEST(Adam, QuadraticMatchesReferenceUpdate) {
  ParamStore ps;
  ps.add("w", Tensor::scalar(1.0));
  AdamConfig cfg;
  cfg.lr = 0.05;
  Adam opt(cfg);
  double w = 1.0, m = 0.0, v = 0.0;
  double prev = 1.0;
  for (int t = 1; t <= 10; ++t) {
    ps.zero_grad();
    const auto& p = ps.get("w");
    ad::backward(ad::mul(p, p));
    opt.step(ps);
    const double g = 2.0 * w;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= cfg.lr * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.value()[0], w, 1e-14);
    EXPECT_LT(std::abs(p.value()[0]), prev);
    prev = std::abs(p.value()[0]);
  }
  EXPECT_EQ(opt.moments().at("w").first.shape(), (Shape{1}));
}

TEST(ParamStore, RejectsDuplicatesAndShapeChanges) {
  ParamStore ps;
  ps.add("a", Tensor(Shape{2}));
  EXPECT_THROW(ps.add("a", Tensor(Shape{2})), ConfigError);
  EXPECT_THROW(ps.assign("a", Tensor(Shape{3})), ShapeError);
  EXPECT_THROW(ps.get("b"), ConfigError);
  EXPECT_EQ(ps.scalar_count(), 2u);
}
