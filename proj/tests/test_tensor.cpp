// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "sffda/tensor.hpp"

using sffda::Shape;
using sffda::ShapeError;
using sffda::Tensor;

TEST(Tensor, ConstructionFillsAndReportsShape) {
  Tensor t(Shape{2, 3, 4}, 1.5);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.dim(1), 3u);
  for (double v : t.data()) EXPECT_EQ(v, 1.5);
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t(Shape{2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at({1, 0}), 3.0);
  EXPECT_EQ(t.at({0, 2}), 2.0);
  t.at({1, 2}) = 9.0;
  EXPECT_EQ(t[5], 9.0);
  EXPECT_THROW(t.at({2, 0}), ShapeError);
  EXPECT_THROW(t.at({0}), ShapeError);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t(Shape{2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.values(), t.values());
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, ItemNeedsOneElement) {
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor(Shape{2}).item(), ShapeError);
}

TEST(Tensor, UniformIsSeededAndBounded) {
  std::mt19937_64 a(3), b(3);
  Tensor x = Tensor::uniform({50}, -2.0, 1.0, a);
  Tensor y = Tensor::uniform({50}, -2.0, 1.0, b);
  EXPECT_EQ(x.values(), y.values());
  for (double v : x.data()) {
    EXPECT_GE(v, -2.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Tensor, HelpersCompareAndCheckFiniteness) {
  Tensor a(Shape{3}, std::vector<double>{1, 2, 3});
  Tensor b(Shape{3}, std::vector<double>{1, 2.5, 2});
  EXPECT_EQ(sffda::max_abs_diff(a, b), 1.0);
  EXPECT_THROW(sffda::max_abs_diff(a, Tensor(Shape{2})), ShapeError);
  EXPECT_TRUE(sffda::all_finite(a));
  b[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(sffda::all_finite(b));
  EXPECT_EQ(sffda::shape_str({2, 3}), "[2,3]");
}
