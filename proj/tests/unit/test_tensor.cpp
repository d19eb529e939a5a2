#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "ssar/errors.hpp"
#include "ssar/ops.hpp"
#include "ssar/parallel.hpp"

using namespace ssar;
using TD = Tensor<double>;

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(TD({2, 0}, {}), ShapeError);
  EXPECT_THROW(TD({2, 2}, {1, 2, 3}), ShapeError);
  TD t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_THROW(t.dim(2), ShapeError);
}

TEST(Tensor, RejectsNonFiniteResults) {
  Tensor<float> x({2}, {1e30f, 1.0f});
  EXPECT_THROW(mul(x, x), NumericalError);
  TD nan({1}, {std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW(add(nan, nan), NumericalError);
}

TEST(Autodiff, SumGradIsOnes) {
  TD x({2, 3}, {1, -2, 3, 4, 5, -6}, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, QuadraticGrad) {
  TD x({2}, {1, 2}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  std::mt19937_64 rng(5);
  auto x = oracle::random_tensor({4}, rng, true);
  auto w1 = oracle::random_tensor({4}, rng);
  auto w2 = oracle::random_tensor({4}, rng);
  // Two paths through x, summed in one loss.
  add(sum(mul(x, w1)), sum(mul(x, w2))).backward();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], w1.data()[i] + w2.data()[i]);

  // Same tensor used twice by one op.
  TD y({3}, {1, 2, 3}, true);
  sum(add(y, y)).backward();
  for (double g : y.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Autodiff, BackwardPreconditions) {
  TD x({2}, {1, 2}, true);
  EXPECT_THROW(mul(x, x).backward(), ShapeError);
  TD plain({1}, {1.0});
  EXPECT_THROW(plain.backward(), Error);
  auto loss = sum(mul(x, x));
  loss.backward();
  EXPECT_THROW(loss.backward(), Error);
}

TEST(Autodiff, GraphIsTopologicalAndVisitsOnce) {
  TD a({2}, {1, 2}, true);
  TD b({2}, {3, 4}, true);
  auto c = mul(a, b);
  auto d = add(c, a);
  auto loss = sum(mul(d, c));
  ComputeGraph<double> graph(loss);
  const auto& order = graph.order();
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!order[i]->node) continue;
    for (const auto& in : order[i]->node->inputs) {
      const auto pos = std::find(order.begin(), order.end(), in) - order.begin();
      EXPECT_LT(static_cast<std::size_t>(pos), i);
    }
  }
  // c is shared by two consumers but recorded once.
  EXPECT_EQ(graph.op_names().size(), 4u);
  EXPECT_EQ(order.size(), 6u);
  EXPECT_EQ(std::count(order.begin(), order.end(), c.impl()), 1);
}

TEST(Autodiff, NoGradGuardSkipsRecording) {
  TD x({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    auto y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Autodiff, DeterministicAcrossRunsAndThreadCounts) {
  auto run = [](std::size_t threads) {
    set_num_threads(threads);
    std::mt19937_64 rng(11);
    auto x = oracle::random_tensor({2, 3, 9, 9}, rng, true);
    auto w = oracle::random_tensor({4, 3, 3, 3}, rng, true);
    auto loss = sum(mul(conv2d(x, w, 1, 1), conv2d(x, w, 1, 1)));
    loss.backward();
    std::vector<double> out(w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.push_back(loss.item());
    return out;
  };
  const auto a = run(1);
  const auto b = run(1);
  const auto c = run(3);
  set_num_threads(1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}
