#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ssar/errors.hpp"
#include "ssar/gradcheck.hpp"
#include "ssar/layers.hpp"
#include "ssar/ops.hpp"

using namespace ssar;
using TD = Tensor<double>;

namespace {

std::vector<double> values(const TD& t) { return {t.data().begin(), t.data().end()}; }

void fill(TD& t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

LstmParams<double> scalar_params(double wx, double wh, double b) {
  auto p = LstmParams<double>::zeros(1, 1);
  for (auto* t : {&p.w_ix, &p.w_fx, &p.w_ox, &p.w_gx}) fill(*t, wx);
  for (auto* t : {&p.w_ih, &p.w_fh, &p.w_oh, &p.w_gh}) fill(*t, wh);
  for (auto* t : {&p.b_i, &p.b_f, &p.b_o, &p.b_g}) fill(*t, b);
  return p;
}

}  // namespace

TEST(InstanceNorm, Examples) {
  auto constant = instance_norm(TD::full({1, 4}, 5.0), 1e-5, 1);
  for (double v : constant.data()) EXPECT_EQ(v, 0.0);
  auto y = instance_norm(TD({1, 3}, {1, 2, 3}), 1e-5, 1);
  // Direct formula: 1 / sqrt(2/3 + 1e-5) = 1.2247357; the rounded literal 1.22472 is within 5e-5.
  const double expected = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y.data()[0], -expected, 1e-12);
  EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
  EXPECT_NEAR(y.data()[2], expected, 1e-12);
  EXPECT_NEAR(y.data()[2], 1.22472, 5e-5);
  EXPECT_THROW(instance_norm(TD({1, 3}, {1, 2, 3}), 0.0, 1), ConfigError);
  EXPECT_THROW(instance_norm(TD({1, 3}, {1, 2, 3}), -1.0, 1), ConfigError);
}

TEST(InstanceNorm, MatchesDirectFormulaPerChannel) {
  std::mt19937_64 rng(7);
  auto x = oracle::random_tensor({3, 4, 5}, rng, false);
  auto y = instance_norm(x, 1e-5, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> ch(x.data().begin() + c * 20, x.data().begin() + (c + 1) * 20);
    const auto ref = oracle::instance_norm(ch, 1e-5);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(y.data()[c * 20 + i], ref[i], 1e-6);
  }
}

TEST(InstanceNorm, AffineInvariance) {
  std::mt19937_64 rng(8);
  auto x = oracle::random_tensor({2, 16}, rng);
  auto shifted = add(scale(x, 3.5), TD::full({2, 16}, -2.0));
  const auto a = values(instance_norm(x, 1e-5, 1));
  const auto b = values(instance_norm(shifted, 1e-5, 1));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4);
}

TEST(InstanceNorm, ZeroMeanUnitVarianceProperty) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const double spread = 0.2 + rep;  // variance >= 1e-2
    auto x = TD({2, 50}, oracle::random_values(100, rng, -spread, spread));
    auto y = instance_norm(x, 1e-5, 1);
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < 50; ++i) m += y.data()[c * 50 + i];
      m /= 50;
      for (std::size_t i = 0; i < 50; ++i) v += std::pow(y.data()[c * 50 + i] - m, 2);
      v /= 50;
      EXPECT_LT(std::abs(m), 1e-6);
      EXPECT_GE(v, 1 - 1e-3);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(SeqAvgPool, Examples) {
  auto p = seq_avg_pool(TD({6, 1}, {1, 2, 3, 4, 5, 6}), 3);
  EXPECT_EQ(values(p), (std::vector<double>{2, 5}));
  TD seq({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_EQ(values(seq_avg_pool(seq, 1)), values(seq));
  auto dropped = seq_avg_pool(TD({7, 1}, {1, 2, 3, 4, 5, 6, 100}), 3);
  EXPECT_EQ(values(dropped), (std::vector<double>{2, 5}));
  try {
    seq_avg_pool(TD({2, 1}, {1, 2}), 3);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("sequence shorter than pooling kernel"), std::string::npos);
  }
}

TEST(SeqAvgPool, PreservesMeanWhenKDividesN) {
  std::mt19937_64 rng(10);
  auto seq = oracle::random_tensor({12, 5}, rng);
  auto pooled = seq_avg_pool(seq, 3);
  auto m0 = reduce(ReduceOp::Mean, seq, {0});
  auto m1 = reduce(ReduceOp::Mean, pooled, {0});
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(m0.data()[i], m1.data()[i], 1e-6);
}

TEST(Lstm, ZeroParameters) {
  auto p = LstmParams<double>::zeros(3, 2);
  auto s = lstm_step(TD({3}, {1, -2, 3}), LstmState<double>::zeros(2), p);
  for (double v : s.h.data()) EXPECT_EQ(v, 0.0);
  for (double v : s.c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, ScalarHandTrace) {
  auto p = scalar_params(1.0, 0.0, 0.0);
  auto s = lstm_step(TD({1}, {1.0}), LstmState<double>::zeros(1), p);
  // Gates: i = f = o = sigmoid(1) = 0.73106, g = tanh(1) = 0.76159.
  EXPECT_NEAR(oracle::sigmoid(1.0), 0.73106, 1e-5);
  EXPECT_NEAR(std::tanh(1.0), 0.76159, 1e-5);
  double h = 0, c = 0;
  oracle::ScalarLstm{1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0}.step(1.0, h, c);
  EXPECT_NEAR(c, 0.55677, 1e-4);
  // h = 0.73106 * tanh(0.55677) = 0.36961
  EXPECT_NEAR(h, 0.36961, 1e-5);
  EXPECT_NEAR(s.c.item(), c, 1e-4);
  EXPECT_NEAR(s.h.item(), h, 1e-4);
}

TEST(Lstm, SaturatedGatesGivePerfectMemory) {
  auto p = LstmParams<double>::zeros(2, 2);
  fill(p.b_f, 20.0);
  fill(p.b_i, -20.0);
  std::mt19937_64 rng(3);
  LstmState<double> s{TD({2}, {0.1, -0.2}), TD({2}, {0.7, -1.3})};
  auto next = lstm_step(oracle::random_tensor({2}, rng), s, p);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(next.c.data()[i], s.c.data()[i], 1e-6);
}

TEST(Lstm, HiddenStateStaysInsideUnitInterval) {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    auto p = LstmParams<double>::init(4, 3, rng);
    for (auto* t : {&p.w_ix, &p.w_ox, &p.w_gx}) {
      for (auto& v : t->mutable_data()) v *= 3.0;
    }
    auto s = LstmState<double>::zeros(3);
    for (int t = 0; t < 10; ++t) {
      s = lstm_step(TD({4}, oracle::random_values(4, rng, -3, 3)), s, p);
      for (double v : s.h.data()) EXPECT_LT(std::abs(v), 1.0);
    }
  }
}

TEST(Lstm, DimensionMismatch) {
  auto p = LstmParams<double>::zeros(3, 2);
  EXPECT_THROW(lstm_step(TD({2}, {1, 2}), LstmState<double>::zeros(2), p), ShapeError);
  EXPECT_THROW(lstm_step(TD({3}, {1, 2, 3}), LstmState<double>::zeros(3), p), ShapeError);
}

TEST(Lstm, InitSetsForgetBias) {
  std::mt19937_64 rng(1);
  auto p = LstmParams<double>::init(3, 2, rng);
  for (double v : p.b_f.data()) EXPECT_EQ(v, 1.0);
  for (double v : p.b_i.data()) EXPECT_EQ(v, 0.0);
  ParamList<double> names;
  p.collect("", names);
  EXPECT_EQ(names.size(), 12u);
}

TEST(BiLstm, SingleElement) {
  std::mt19937_64 rng(2);
  auto f = LstmParams<double>::init(3, 4, rng);
  auto b = LstmParams<double>::init(3, 4, rng);
  auto x = oracle::random_tensor({1, 3}, rng);
  auto y = bilstm(x, f, b);
  EXPECT_EQ(y.shape(), (Shape{1, 8}));
  auto hf = lstm_step(select(x, 0), LstmState<double>::zeros(4), f).h;
  auto hb = lstm_step(select(x, 0), LstmState<double>::zeros(4), b).h;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(y.data()[i], hf.data()[i]);
    EXPECT_EQ(y.data()[4 + i], hb.data()[i]);
  }
}

TEST(BiLstm, PalindromeSymmetry) {
  std::mt19937_64 rng(3);
  auto p = LstmParams<double>::init(2, 3, rng);
  auto a = oracle::random_values(2, rng), b = oracle::random_values(2, rng);
  TD x({5, 2}, {a[0], a[1], b[0], b[1], 0.3, -0.4, b[0], b[1], a[0], a[1]});
  auto y = bilstm(x, p, p);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(y.data()[t * 6 + i], y.data()[(4 - t) * 6 + 3 + i], 1e-15);
    }
}

TEST(BiLstm, MatchesUnrolledScalarOracle) {
  std::mt19937_64 rng(4);
  auto f = LstmParams<double>::init(1, 1, rng);
  auto b = LstmParams<double>::init(1, 1, rng);
  auto as_oracle = [](const LstmParams<double>& p) {
    return oracle::ScalarLstm{p.w_ix.item(), p.w_fx.item(), p.w_ox.item(), p.w_gx.item(),
                              p.w_ih.item(), p.w_fh.item(), p.w_oh.item(), p.w_gh.item(),
                              p.b_i.item(),  p.b_f.item(),  p.b_o.item(),  p.b_g.item()};
  };
  const std::vector<double> seq = {0.5, -1.2, 2.0};
  auto y = bilstm(TD({3, 1}, seq), f, b);
  double h = 0, c = 0;
  const auto of = as_oracle(f), ob = as_oracle(b);
  for (std::size_t t = 0; t < 3; ++t) {
    of.step(seq[t], h, c);
    EXPECT_NEAR(y.data()[t * 2], h, 1e-5);
  }
  h = c = 0;
  for (std::size_t t = 3; t-- > 0;) {
    ob.step(seq[t], h, c);
    EXPECT_NEAR(y.data()[t * 2 + 1], h, 1e-5);
  }
}

TEST(BiLstm, DirectionsAreIndependent) {
  std::mt19937_64 rng(5);
  auto f = LstmParams<double>::init(3, 2, rng);
  auto b = LstmParams<double>::init(3, 2, rng);
  auto x = oracle::random_tensor({4, 3}, rng);
  const auto base = values(bilstm(x, f, b));
  auto b2 = LstmParams<double>::init(3, 2, rng);
  auto f2 = LstmParams<double>::init(3, 2, rng);
  const auto bwd_changed = values(bilstm(x, f, b2));
  const auto fwd_changed = values(bilstm(x, f2, b));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_EQ(base[t * 4 + i], bwd_changed[t * 4 + i]);
      EXPECT_EQ(base[t * 4 + 2 + i], fwd_changed[t * 4 + 2 + i]);
    }
  EXPECT_THROW(bilstm(TD({3}, {1, 2, 3}), f, b), ShapeError);
}

TEST(BasicBlock, ZeroWeightsPassSkip) {
  std::mt19937_64 rng(6);
  auto block = BasicBlock<double>::init(3, 3, 1, 2, rng);
  ASSERT_FALSE(block.has_projection());
  fill(block.conv1, 0.0);
  fill(block.conv2, 0.0);
  auto x = TD({3, 5, 5}, oracle::random_values(75, rng, 0.0, 2.0));
  EXPECT_EQ(values(basic_block_forward(x, block)), values(x));
}

TEST(BasicBlock, StridedProjectionShape) {
  std::mt19937_64 rng(7);
  auto block = BasicBlock<double>::init(64, 128, 2, 2, rng);
  EXPECT_TRUE(block.has_projection());
  auto y = basic_block_forward(oracle::random_tensor({64, 8, 8}, rng), block);
  EXPECT_EQ(y.shape(), (Shape{128, 4, 4}));
  auto block3 = BasicBlock<double>::init(2, 4, 2, 3, rng);
  EXPECT_EQ(basic_block_forward(oracle::random_tensor({2, 5, 6, 7}, rng), block3).shape(), (Shape{4, 3, 3, 4}));
  EXPECT_THROW(basic_block_forward(oracle::random_tensor({3, 8, 8}, rng), block), ShapeError);
}

TEST(Linear, Examples) {
  auto id = TD({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(values(linear(TD({2}, {3, -4}), id, TD({2}, {0, 0}))), (std::vector<double>{3, -4}));
  EXPECT_EQ(linear(TD({2}, {2, 3}), TD({1, 2}, {1, 1}), TD({1}, {1})).item(), 6.0);
  EXPECT_THROW(linear(TD({3}, {1, 2, 3}), id), ShapeError);
}

TEST(Linear, MatchesMatmulPlusAdd) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    auto x = oracle::random_tensor({5}, rng);
    auto w = oracle::random_tensor({3, 5}, rng);
    auto b = oracle::random_tensor({3}, rng);
    auto ref = add(reshape(matmul(w, reshape(x, {5, 1})), {3}), b);
    EXPECT_EQ(values(linear(x, w, b)), values(ref));
  }
}

TEST(Layers, FiniteInputsGiveFiniteOutputs) {
  std::mt19937_64 rng(9);
  auto block = BasicBlock<double>::init(2, 3, 2, 2, rng);
  auto y = basic_block_forward(TD({2, 6, 6}, oracle::random_values(72, rng, -1e3, 1e3)), block);
  for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Layers, GradientSuitePasses) {
  GradCheckOptions opts;
  for (const auto& row : run_gradcheck_suite(GradCheckScope::Layer, 5, opts)) {
    EXPECT_TRUE(row.passed) << row.name << " " << row.max_rel_error;
    EXPECT_EQ(row.instances, 5u);
  }
}
