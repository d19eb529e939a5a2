#include "ssar/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ssar/errors.hpp"
#include "ssar/models.hpp"
#include "ssar/ops.hpp"
#include "ssar/training.hpp"

namespace ssar {

GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss_fn, const ParamList<double>& wrt,
                                const GradCheckOptions& options) {
  std::vector<std::vector<double>> analytic;
  {
    for (auto p : wrt) p.tensor.zero_grad();
    Tensor<double> loss = loss_fn();
    loss.backward();
    for (const auto& p : wrt) {
      if (p.tensor.has_grad()) {
        analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
      } else {
        analytic.emplace_back(p.tensor.numel(), 0.0);
      }
    }
  }
  if (options.inject_fault && !analytic.empty() && !analytic.front().empty()) {
    analytic.front()[0] += 1e-3 * (1.0 + std::abs(analytic.front()[0]));
  }

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    Tensor<double> tensor = wrt[t].tensor;
    auto values = tensor.mutable_data();
    std::vector<std::size_t> coords(values.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (options.max_coords > 0 && coords.size() > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double f_plus = loss_fn().item();
      values[i] = saved - options.step;
      const double f_minus = loss_fn().item();
      values[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * options.step);
      const double rel = std::abs(analytic[t][i] - numeric) / std::max(kGradCheckFloor, std::abs(numeric));
      ++result.coords;
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = wrt[t].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

Tensor<double> weighted_sum(const Tensor<double>& x, const Tensor<double>& weights) {
  return sum(mul(x, weights));
}

GradCheckScope parse_gradcheck_scope(const std::string& text) {
  if (text == "op") return GradCheckScope::Op;
  if (text == "layer") return GradCheckScope::Layer;
  if (text == "model") return GradCheckScope::Model;
  throw ConfigError("unknown gradcheck scope '" + text + "' (expected op, layer or model)");
}

namespace {

using D = double;
using TensorD = Tensor<D>;

TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<D> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return TensorD(std::move(shape), std::move(v), grad);
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// One random instance: the tensors to differentiate and a scalar loss.
struct Instance {
  ParamList<D> wrt;
  std::function<TensorD()> loss;
};

using InstanceFactory = std::function<Instance(std::mt19937_64&)>;

struct Case {
  std::string name;
  InstanceFactory make;
  std::size_t max_coords = 0;
};

/// loss = sum(f(inputs) * R) with a fixed random projection R.
Instance projected(ParamList<D> wrt, std::function<TensorD()> forward, std::mt19937_64& rng) {
  TensorD probe;
  {
    NoGradGuard g;
    probe = forward();
  }
  TensorD weights = random_tensor(probe.shape(), rng, -1.0, 1.0, false);
  return {std::move(wrt), [forward, weights] { return weighted_sum(forward(), weights); }};
}

Instance unary_case(ElementwiseOp op, std::mt19937_64& rng) {
  auto x = random_tensor({pick(rng, 2, 4), pick(rng, 2, 5)}, rng, -2.0, 2.0);
  if (op == ElementwiseOp::Relu) {
    // Keep samples away from the kink where central differences are invalid.
    for (auto& v : x.mutable_data()) {
      if (std::abs(v) < 0.05) v += 0.1;
    }
  }
  return projected({{"x", x}}, [op, x] { return elementwise(op, x); }, rng);
}

Instance binary_case(ElementwiseOp op, std::mt19937_64& rng) {
  Shape s{pick(rng, 2, 4), pick(rng, 2, 5)};
  auto a = random_tensor(s, rng);
  auto b = random_tensor(s, rng);
  return projected({{"a", a}, {"b", b}}, [op, a, b] { return elementwise(op, a, b); }, rng);
}

Instance conv_case(std::size_t spatial, std::mt19937_64& rng) {
  const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
  const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3), k = pick(rng, 1, 3);
  Shape xs{cin}, ws{cout, cin};
  for (std::size_t d = 0; d < spatial; ++d) {
    xs.push_back(pick(rng, std::max<std::size_t>(k, 3), spatial == 2 ? 6 : 4));
    ws.push_back(k);
  }
  if (spatial == 2 && pick(rng, 0, 1) == 1) xs.insert(xs.begin(), 2);  // batched
  auto x = random_tensor(xs, rng);
  auto w = random_tensor(ws, rng);
  return projected({{"x", x}, {"weight", w}},
                   [x, w, spatial, stride, pad] {
                     return spatial == 2 ? conv2d(x, w, stride, pad) : conv3d(x, w, stride, pad);
                   },
                   rng);
}

Instance pool_case(std::size_t spatial, std::mt19937_64& rng) {
  Shape xs{pick(rng, 1, 3)};
  for (std::size_t d = 0; d < spatial; ++d) xs.push_back(pick(rng, 3, 6));
  auto x = random_tensor(xs, rng);
  const std::size_t k = pick(rng, 2, 3), stride = pick(rng, 1, 2), pad = k == 3 ? pick(rng, 0, 1) : 0;
  return projected({{"x", x}},
                   [x, spatial, k, stride, pad] {
                     return spatial == 2 ? max_pool2d(x, k, stride, pad) : max_pool3d(x, k, stride, pad);
                   },
                   rng);
}

Instance reduce_case(ReduceOp op, std::mt19937_64& rng) {
  auto x = random_tensor({pick(rng, 2, 3), pick(rng, 2, 4), pick(rng, 2, 4)}, rng);
  std::vector<std::size_t> axes;
  for (std::size_t a = 0; a < 3; ++a) {
    if (pick(rng, 0, 1)) axes.push_back(a);
  }
  if (axes.empty()) axes.push_back(pick(rng, 0, 2));
  return projected({{"x", x}}, [op, x, axes] { return reduce(op, x, axes); }, rng);
}

Instance instance_norm_case(std::mt19937_64& rng) {
  const std::size_t spatial = pick(rng, 1, 3);
  Shape xs{pick(rng, 1, 3)};
  for (std::size_t d = 0; d < spatial; ++d) xs.push_back(pick(rng, 2, 4));
  auto x = random_tensor(xs, rng, -2.0, 2.0);
  return projected({{"x", x}}, [x, spatial] { return instance_norm(x, D(kInstanceNormEps), spatial); }, rng);
}

Instance matmul_case(std::mt19937_64& rng) {
  const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
  auto a = random_tensor({m, k}, rng);
  auto b = random_tensor({k, n}, rng);
  return projected({{"a", a}, {"b", b}}, [a, b] { return matmul(a, b); }, rng);
}

Instance linear_case(std::mt19937_64& rng) {
  const std::size_t in = pick(rng, 1, 6), out = pick(rng, 1, 4);
  auto x = random_tensor({in}, rng);
  auto w = random_tensor({out, in}, rng);
  auto b = random_tensor({out}, rng);
  return projected({{"x", x}, {"weight", w}, {"bias", b}}, [x, w, b] { return linear(x, w, b); }, rng);
}

Instance mae_case(std::mt19937_64& rng) {
  const std::size_t n = pick(rng, 1, 6);
  auto pred = random_tensor({n}, rng, -3.0, 3.0);
  std::vector<D> target(n);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  for (std::size_t i = 0; i < n; ++i) {
    do {
      target[i] = dist(rng);
    } while (std::abs(target[i] - pred.data()[i]) < 0.05);
  }
  return {{{"pred", pred}}, [pred, target] { return mae_loss(pred, std::span<const D>(target)); }};
}

Instance lstm_step_case(std::mt19937_64& rng) {
  const std::size_t input = pick(rng, 1, 4), hidden = pick(rng, 1, 4);
  auto params = LstmParams<D>::init(input, hidden, rng);
  auto p = random_tensor({input}, rng);
  auto h = random_tensor({hidden}, rng, -0.9, 0.9);
  auto c = random_tensor({hidden}, rng);
  ParamList<D> wrt{{"p", p}, {"h", h}, {"c", c}};
  params.collect("", wrt);
  return projected(std::move(wrt),
                   [p, h, c, params] {
                     auto next = lstm_step(p, LstmState<D>{h, c}, params);
                     return concat<D>({next.h, next.c});
                   },
                   rng);
}

Instance bilstm_case(std::mt19937_64& rng) {
  const std::size_t m = pick(rng, 1, 4), input = pick(rng, 1, 3), hidden = pick(rng, 1, 3);
  auto fwd = LstmParams<D>::init(input, hidden, rng);
  auto bwd = LstmParams<D>::init(input, hidden, rng);
  auto seq = random_tensor({m, input}, rng);
  ParamList<D> wrt{{"sequence", seq}};
  fwd.collect("fwd.", wrt);
  bwd.collect("bwd.", wrt);
  return projected(std::move(wrt), [seq, fwd, bwd] { return bilstm(seq, fwd, bwd); }, rng);
}

Instance block_case(std::mt19937_64& rng) {
  const std::size_t spatial = pick(rng, 2, 3);
  const std::size_t in = pick(rng, 1, 3);
  const std::size_t stride = pick(rng, 1, 2);
  const std::size_t out = stride == 2 ? pick(rng, 1, 3) : (pick(rng, 0, 1) ? in : pick(rng, 1, 3));
  auto block = BasicBlock<D>::init(in, out, stride, spatial, rng);
  Shape xs{in};
  for (std::size_t d = 0; d < spatial; ++d) xs.push_back(spatial == 2 ? pick(rng, 4, 6) : pick(rng, 3, 4));
  auto x = random_tensor(xs, rng, -2.0, 2.0);
  ParamList<D> wrt{{"x", x}};
  block.collect("", wrt);
  return projected(std::move(wrt), [x, block] { return basic_block_forward(x, block); }, rng);
}

Instance seq_pool_case(std::mt19937_64& rng) {
  const std::size_t k = pick(rng, 1, 3), n = pick(rng, k, 3 * k + 2), d = pick(rng, 1, 4);
  auto x = random_tensor({n, d}, rng);
  return projected({{"sequence", x}}, [x, k] { return seq_avg_pool(x, k); }, rng);
}

Instance shape_ops_case(std::mt19937_64& rng) {
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({1, 3}, rng);
  auto bias = random_tensor({3}, rng);
  return projected({{"a", a}, {"b", b}, {"bias", bias}},
                   [a, b, bias] {
                     auto joined = concat<D>({a, b, a});
                     auto rows = stack<D>({select(joined, 2), select(joined, 0)});
                     return reshape(add_bias(scale(rows, D(1.5)), bias), {6});
                   },
                   rng);
}

SliceSeqConfig mini_sliceseq_config() {
  SliceSeqConfig c;
  c.backbone = BackboneConfig{1, 2, 3, 1, false, {2, 3}, 1};
  c.seq_len = 4;
  c.slice_height = 6;
  c.slice_width = 6;
  c.pool_k = 2;
  c.hidden = 3;
  return c;
}

Instance sliceseq_model_case(std::mt19937_64& rng) {
  auto net = std::make_shared<SliceSeqAgeNet<D>>(mini_sliceseq_config(), rng());
  auto x = random_tensor({4, 1, 6, 6}, rng, -2.0, 2.0, false);
  return {net->parameters(), [net, x] { return sum(net->forward(x)); }};
}

Instance vol3d_model_case(std::mt19937_64& rng) {
  Vol3DConfig c;
  c.backbone = BackboneConfig{1, 2, 3, 1, false, {2, 3}, 1};
  auto net = std::make_shared<Volumetric3DNet<D>>(c, rng());
  auto x = random_tensor({1, 4, 5, 5}, rng, -2.0, 2.0, false);
  return {net->parameters(), [net, x] { return sum(net->forward(x)); }};
}

std::vector<Case> cases_for(GradCheckScope scope) {
  switch (scope) {
    case GradCheckScope::Op:
      return {
          {"add", [](auto& r) { return binary_case(ElementwiseOp::Add, r); }},
          {"sub", [](auto& r) { return binary_case(ElementwiseOp::Sub, r); }},
          {"mul", [](auto& r) { return binary_case(ElementwiseOp::Mul, r); }},
          {"neg", [](auto& r) { return unary_case(ElementwiseOp::Neg, r); }},
          {"sigmoid", [](auto& r) { return unary_case(ElementwiseOp::Sigmoid, r); }},
          {"tanh", [](auto& r) { return unary_case(ElementwiseOp::Tanh, r); }},
          {"relu", [](auto& r) { return unary_case(ElementwiseOp::Relu, r); }},
          {"matmul", matmul_case},
          {"linear", linear_case},
          {"conv2d", [](auto& r) { return conv_case(2, r); }},
          {"conv3d", [](auto& r) { return conv_case(3, r); }},
          {"max_pool2d", [](auto& r) { return pool_case(2, r); }},
          {"max_pool3d", [](auto& r) { return pool_case(3, r); }},
          {"reduce_mean", [](auto& r) { return reduce_case(ReduceOp::Mean, r); }},
          {"reduce_sum", [](auto& r) { return reduce_case(ReduceOp::Sum, r); }},
          {"reduce_max", [](auto& r) { return reduce_case(ReduceOp::Max, r); }},
          {"instance_norm", instance_norm_case},
          {"seq_avg_pool", seq_pool_case},
          {"shape_ops", shape_ops_case},
          {"mae_loss", mae_case},
      };
    case GradCheckScope::Layer:
      return {
          {"linear", linear_case},
          {"instance_norm", instance_norm_case},
          {"lstm_step", lstm_step_case},
          {"bilstm", bilstm_case},
          {"basic_block", block_case, 24},
          {"mae_loss", mae_case},
      };
    case GradCheckScope::Model:
      return {
          {"sliceseq_mini", sliceseq_model_case, 4},
          {"vol3d_mini", vol3d_model_case, 4},
      };
  }
  return {};
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(GradCheckScope scope, std::size_t instances,
                                              const GradCheckOptions& options, const std::string& fault_target) {
  std::vector<GradCheckRow> rows;
  std::mt19937_64 rng(options.seed);
  for (const auto& c : cases_for(scope)) {
    GradCheckRow row;
    row.name = c.name;
    row.passed = true;
    for (std::size_t i = 0; i < instances; ++i) {
      Instance inst = c.make(rng);
      GradCheckOptions opt = options;
      opt.seed = rng();
      if (c.max_coords && (opt.max_coords == 0 || c.max_coords < opt.max_coords)) opt.max_coords = c.max_coords;
      opt.inject_fault = options.inject_fault || (!fault_target.empty() && fault_target == c.name && i == 0);
      const auto res = check_gradients(inst.loss, inst.wrt, opt);
      row.instances += 1;
      row.coords += res.coords;
      row.max_rel_error = std::max(row.max_rel_error, res.max_rel_error);
      row.passed = row.passed && res.passed;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ssar
