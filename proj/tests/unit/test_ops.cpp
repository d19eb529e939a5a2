#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ssar/errors.hpp"
#include "ssar/ops.hpp"

using namespace ssar;
using TD = Tensor<double>;

TEST(Elementwise, Definitions) {
  TD zero({1}, {0.0});
  EXPECT_EQ(sigmoid(zero).item(), 0.5);
  EXPECT_EQ(ssar::tanh(zero).item(), 0.0);
  EXPECT_EQ(relu(TD({1}, {-3.0})).item(), 0.0);
  EXPECT_NEAR(sigmoid(TD({1}, {1.0})).item(), 0.73106, 1e-5);
  EXPECT_EQ(elementwise(ElementwiseOp::Neg, TD({2}, {1, -2})).data()[1], 2.0);
}

TEST(Elementwise, SigmoidGradient) {
  TD x({1}, {0.3}, true);
  sum(sigmoid(x)).backward();
  const double s = 1.0 / (1.0 + std::exp(-0.3));
  EXPECT_NEAR(x.grad()[0], s * (1 - s), 1e-15);
}

TEST(Elementwise, ReluSubgradientAtZeroIsZero) {
  TD x({3}, {-1, 0, 2}, true);
  sum(relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
  try {
    add(TD({2, 3}, std::vector<double>(6, 1.0)), TD({3, 2}, std::vector<double>(6, 1.0)));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3, 2]"), std::string::npos) << msg;
  }
  // No implicit broadcasting.
  EXPECT_THROW(add(TD({2}, {1, 2}), TD({1}, {1})), ShapeError);
}

TEST(Elementwise, BiasAddOverTrailingDim) {
  auto y = add_bias(TD({2, 2}, {1, 2, 3, 4}), TD({2}, {10, 20}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{11, 22, 13, 24}));
  EXPECT_THROW(add_bias(TD({2, 2}, {1, 2, 3, 4}), TD({3}, {1, 2, 3})), ShapeError);
}

TEST(Matmul, Examples) {
  auto id = TD({2, 2}, {1, 0, 0, 1});
  auto m = TD({2, 2}, {1, 2, 3, 4});
  auto r = matmul(id, m);
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(matmul(TD({1, 2}, {1, 2}), TD({2, 1}, {3, 4})).item(), 11.0);
  EXPECT_THROW(matmul(TD({2, 3}, std::vector<double>(6, 1)), TD({2, 2}, {1, 2, 3, 4})), ShapeError);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 5; ++rep) {
    auto a = oracle::random_tensor({3, 4}, rng);
    auto b = oracle::random_tensor({4, 2}, rng);
    const auto ref = oracle::matmul({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}, 3, 4, 2);
    EXPECT_LT(oracle::max_abs_diff(matmul(a, b).data(), ref), 1e-12);
  }
}

TEST(Conv2d, Examples) {
  auto y = conv2d(TD::full({1, 3, 3}, 1.0), TD({1, 1, 1, 1}, {2.0}), 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 2.0);

  std::vector<double> ramp(9);
  for (int i = 0; i < 9; ++i) ramp[i] = i;
  auto avg = conv2d(TD({1, 3, 3}, ramp), TD::full({1, 1, 3, 3}, 1.0 / 9.0), 1, 0);
  EXPECT_EQ(avg.shape(), (Shape{1, 1, 1}));
  EXPECT_NEAR(avg.item(), 4.0, 1e-12);

  try {
    conv2d(TD::full({1, 2, 2}, 1.0), TD::full({1, 1, 5, 5}, 1.0), 1, 1);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("kernel larger than padded input"), std::string::npos);
  }
}

TEST(Conv2d, MatchesNestedLoopForAllStridePad) {
  std::mt19937_64 rng(2);
  for (std::size_t stride : {1, 2})
    for (std::size_t pad : {0, 1}) {
      auto x = oracle::random_tensor({2, 8, 8}, rng);
      auto w = oracle::random_tensor({4, 2, 3, 3}, rng);
      std::size_t oh = 0, ow = 0;
      const auto ref = oracle::conv2d({x.data().begin(), x.data().end()}, 2, 8, 8, {w.data().begin(), w.data().end()},
                                      4, 3, stride, pad, oh, ow);
      auto y = conv2d(x, w, stride, pad);
      ASSERT_EQ(y.shape(), (Shape{4, oh, ow}));
      EXPECT_LT(oracle::max_abs_diff(y.data(), ref), 1e-10) << stride << "/" << pad;
    }
}

TEST(Conv2d, BatchedMatchesPerSample) {
  std::mt19937_64 rng(3);
  auto x = oracle::random_tensor({3, 2, 6, 6}, rng);
  auto w = oracle::random_tensor({2, 2, 3, 3}, rng);
  auto y = conv2d(x, w, 2, 1);
  for (std::size_t n = 0; n < 3; ++n) {
    auto single = conv2d(select(x, n), w, 2, 1);
    auto row = select(y, n);
    EXPECT_EQ(std::vector<double>(row.data().begin(), row.data().end()),
              std::vector<double>(single.data().begin(), single.data().end()));
  }
}

TEST(Conv3d, Examples) {
  EXPECT_EQ(conv3d(TD({1, 1, 1, 1}, {3.0}), TD({1, 1, 1, 1, 1}, {-2.0}), 1, 0).item(), -6.0);
  EXPECT_EQ(conv3d(TD::full({1, 3, 3, 3}, 1.0), TD::full({1, 1, 3, 3, 3}, 1.0), 1, 0).item(), 27.0);
}

TEST(Conv3d, MatchesNestedLoopForAllStridePad) {
  std::mt19937_64 rng(4);
  for (std::size_t stride : {1, 2})
    for (std::size_t pad : {0, 1}) {
      auto x = oracle::random_tensor({1, 4, 4, 4}, rng);
      auto w = oracle::random_tensor({2, 1, 3, 3, 3}, rng);
      std::size_t od = 0, oh = 0, ow = 0;
      const auto ref = oracle::conv3d({x.data().begin(), x.data().end()}, 1, 4, 4, 4,
                                      {w.data().begin(), w.data().end()}, 2, 3, stride, pad, od, oh, ow);
      auto y = conv3d(x, w, stride, pad);
      ASSERT_EQ(y.shape(), (Shape{2, od, oh, ow}));
      EXPECT_LT(oracle::max_abs_diff(y.data(), ref), 1e-10) << stride << "/" << pad;
    }
}

TEST(Reduce, Examples) {
  EXPECT_EQ(mean(TD({3}, {1, 2, 3})).item(), 2.0);
  auto m = reduce(ReduceOp::Max, TD({2, 2}, {1, 5, 7, 2}), {1});
  EXPECT_EQ(m.shape(), (Shape{2}));
  EXPECT_EQ(m.data()[0], 5.0);
  EXPECT_EQ(m.data()[1], 7.0);

  TD x({3}, {1, 2, 3});
  const double var = mean(mul(x, x)).item() - mean(x).item() * mean(x).item();
  EXPECT_NEAR(var, 2.0 / 3.0, 1e-15);
}

TEST(Reduce, AxesHandling) {
  TD x({2, 3}, {1, 2, 3, 4, 5, 6});
  auto same = reduce(ReduceOp::Sum, x, {});
  EXPECT_EQ(same.shape(), x.shape());
  EXPECT_THROW(reduce(ReduceOp::Sum, x, {2}), ShapeError);
  auto cols = reduce(ReduceOp::Sum, x, {0});
  EXPECT_EQ(std::vector<double>(cols.data().begin(), cols.data().end()), (std::vector<double>{5, 7, 9}));
}

TEST(Reduce, MaxRoutesGradientToArgmax) {
  TD x({2, 2}, {1, 5, 7, 2}, true);
  sum(reduce(ReduceOp::Max, x, {1})).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 1, 0}));
}

TEST(MaxPool, PicksWindowMaxima) {
  TD x({1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  auto y = max_pool2d(x, 2, 2, 0);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{6, 8, 14, 16}));
}

TEST(ShapeOps, ReshapeSelectConcatStack) {
  TD x({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(reshape(x, {3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(reshape(x, {4}), ShapeError);
  EXPECT_EQ(select(x, 1).data()[0], 4.0);
  EXPECT_EQ(concat<double>({x, x}).shape(), (Shape{4, 3}));
  EXPECT_EQ(stack<double>({x, x}).shape(), (Shape{2, 2, 3}));
}
