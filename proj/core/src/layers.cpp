#include "ssar/layers.hpp"

#include <algorithm>
#include <cmath>

#include "ssar/errors.hpp"
#include "ssar/ops.hpp"

namespace ssar {

template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
LstmParams<T> LstmParams<T>::init(std::size_t input, std::size_t hidden, std::mt19937_64& rng) {
  LstmParams p;
  p.w_ix = uniform_init<T>({hidden, input}, input, rng);
  p.w_fx = uniform_init<T>({hidden, input}, input, rng);
  p.w_ox = uniform_init<T>({hidden, input}, input, rng);
  p.w_gx = uniform_init<T>({hidden, input}, input, rng);
  p.w_ih = uniform_init<T>({hidden, hidden}, hidden, rng);
  p.w_fh = uniform_init<T>({hidden, hidden}, hidden, rng);
  p.w_oh = uniform_init<T>({hidden, hidden}, hidden, rng);
  p.w_gh = uniform_init<T>({hidden, hidden}, hidden, rng);
  p.b_i = Tensor<T>::zeros({hidden}, true);
  p.b_f = Tensor<T>::full({hidden}, T(1), true);
  p.b_o = Tensor<T>::zeros({hidden}, true);
  p.b_g = Tensor<T>::zeros({hidden}, true);
  return p;
}

template <typename T>
LstmParams<T> LstmParams<T>::zeros(std::size_t input, std::size_t hidden) {
  LstmParams p;
  for (auto* w : {&p.w_ix, &p.w_fx, &p.w_ox, &p.w_gx}) *w = Tensor<T>::zeros({hidden, input}, true);
  for (auto* w : {&p.w_ih, &p.w_fh, &p.w_oh, &p.w_gh}) *w = Tensor<T>::zeros({hidden, hidden}, true);
  for (auto* b : {&p.b_i, &p.b_f, &p.b_o, &p.b_g}) *b = Tensor<T>::zeros({hidden}, true);
  return p;
}

template <typename T>
void LstmParams<T>::validate() const {
  for (const auto* t : {&w_ix, &w_fx, &w_ox, &w_gx, &w_ih, &w_fh, &w_oh, &w_gh, &b_i, &b_f, &b_o, &b_g}) {
    if (!t->defined()) throw ShapeError("LSTM parameters incomplete");
  }
  if (w_ix.rank() != 2) throw ShapeError("LSTM W_ix must be a matrix, got " + to_string(w_ix.shape()));
  const std::size_t hidden = w_ix.dim(0), input = w_ix.dim(1);
  const Shape wx{hidden, input}, wh{hidden, hidden}, b{hidden};
  auto expect = [](const Tensor<T>& t, const Shape& s, const char* name) {
    if (t.shape() != s) {
      throw ShapeError(std::string("LSTM ") + name + ": expected " + to_string(s) + ", got " + to_string(t.shape()));
    }
  };
  expect(w_fx, wx, "W_fx");
  expect(w_ox, wx, "W_ox");
  expect(w_gx, wx, "W_gx");
  expect(w_ih, wh, "W_ih");
  expect(w_fh, wh, "W_fh");
  expect(w_oh, wh, "W_oh");
  expect(w_gh, wh, "W_gh");
  expect(b_i, b, "b_i");
  expect(b_f, b, "b_f");
  expect(b_o, b, "b_o");
  expect(b_g, b, "b_g");
}

template <typename T>
void LstmParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + "W_ix", w_ix});
  out.push_back({prefix + "W_fx", w_fx});
  out.push_back({prefix + "W_ox", w_ox});
  out.push_back({prefix + "W_gx", w_gx});
  out.push_back({prefix + "W_ih", w_ih});
  out.push_back({prefix + "W_fh", w_fh});
  out.push_back({prefix + "W_oh", w_oh});
  out.push_back({prefix + "W_gh", w_gh});
  out.push_back({prefix + "b_i", b_i});
  out.push_back({prefix + "b_f", b_f});
  out.push_back({prefix + "b_o", b_o});
  out.push_back({prefix + "b_g", b_g});
}

template <typename T>
LstmState<T> LstmState<T>::zeros(std::size_t hidden) {
  return {Tensor<T>::zeros({hidden}), Tensor<T>::zeros({hidden})};
}

template <typename T>
LstmState<T> lstm_step(const Tensor<T>& input, const LstmState<T>& state, const LstmParams<T>& params) {
  params.validate();
  const std::size_t hidden = params.hidden_size();
  if (input.rank() != 1 || input.dim(0) != params.input_size()) {
    throw ShapeError("lstm_step: input " + to_string(input.shape()) + " does not match input size " +
                     std::to_string(params.input_size()));
  }
  if (state.h.shape() != Shape{hidden} || state.c.shape() != Shape{hidden}) {
    throw ShapeError("lstm_step: state " + to_string(state.h.shape()) + "/" + to_string(state.c.shape()) +
                     " does not match hidden size " + std::to_string(hidden));
  }
  auto gate = [&](const Tensor<T>& wx, const Tensor<T>& wh, const Tensor<T>& b) {
    return add(linear(input, wx, b), linear(state.h, wh));
  };
  Tensor<T> i = sigmoid(gate(params.w_ix, params.w_ih, params.b_i));
  Tensor<T> f = sigmoid(gate(params.w_fx, params.w_fh, params.b_f));
  Tensor<T> o = sigmoid(gate(params.w_ox, params.w_oh, params.b_o));
  Tensor<T> g = tanh(gate(params.w_gx, params.w_gh, params.b_g));
  Tensor<T> c = add(mul(f, state.c), mul(i, g));
  Tensor<T> h = mul(o, tanh(c));
  // o and tanh(c) are bounded by 1; rounding can reach 1 on saturation but never exceed it.
  for (T v : h.data()) {
    if (std::abs(v) > T(1)) throw NumericalError("lstm_step: hidden state left [-1, 1]");
  }
  return {h, c};
}

template <typename T>
Tensor<T> bilstm(const Tensor<T>& sequence, const LstmParams<T>& forward, const LstmParams<T>& backward) {
  if (sequence.rank() != 2) throw ShapeError("bilstm: expected [m, input] sequence, got " + to_string(sequence.shape()));
  const std::size_t m = sequence.dim(0);
  if (m == 0) throw ShapeError("bilstm: empty sequence");
  forward.validate();
  backward.validate();

  std::vector<Tensor<T>> rows;
  rows.reserve(m);
  for (std::size_t t = 0; t < m; ++t) rows.push_back(select(sequence, t));

  std::vector<Tensor<T>> h_fwd(m), h_bwd(m);
  auto state = LstmState<T>::zeros(forward.hidden_size());
  for (std::size_t t = 0; t < m; ++t) {
    state = lstm_step(rows[t], state, forward);
    h_fwd[t] = state.h;
  }
  state = LstmState<T>::zeros(backward.hidden_size());
  for (std::size_t t = m; t-- > 0;) {
    state = lstm_step(rows[t], state, backward);
    h_bwd[t] = state.h;
  }

  std::vector<Tensor<T>> out;
  out.reserve(m);
  for (std::size_t t = 0; t < m; ++t) out.push_back(concat<T>({h_fwd[t], h_bwd[t]}));
  return stack(out);
}

template <typename T>
BasicBlock<T> BasicBlock<T>::init(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                                  std::size_t spatial_rank, std::mt19937_64& rng) {
  if (spatial_rank != 2 && spatial_rank != 3) throw ConfigError("BasicBlock: spatial rank must be 2 or 3");
  BasicBlock b;
  b.in_channels = in_channels;
  b.out_channels = out_channels;
  b.stride = stride;
  b.spatial_rank = spatial_rank;
  auto kernel_shape = [&](std::size_t out, std::size_t in, std::size_t k) {
    Shape s{out, in};
    for (std::size_t d = 0; d < spatial_rank; ++d) s.push_back(k);
    return s;
  };
  const std::size_t taps = spatial_rank == 2 ? 9 : 27;
  b.conv1 = uniform_init<T>(kernel_shape(out_channels, in_channels, 3), in_channels * taps, rng);
  b.conv2 = uniform_init<T>(kernel_shape(out_channels, out_channels, 3), out_channels * taps, rng);
  if (stride != 1 || in_channels != out_channels) {
    b.projection = uniform_init<T>(kernel_shape(out_channels, in_channels, 1), in_channels, rng);
  }
  return b;
}

template <typename T>
void BasicBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + "conv1.weight", conv1});
  out.push_back({prefix + "conv2.weight", conv2});
  if (has_projection()) out.push_back({prefix + "projection.weight", projection});
}

template <typename T>
Tensor<T> spatial_conv(const Tensor<T>& x, const Tensor<T>& weight, std::size_t spatial_rank, std::size_t stride,
                       std::size_t pad) {
  return spatial_rank == 3 ? conv3d(x, weight, stride, pad) : conv2d(x, weight, stride, pad);
}

template <typename T>
Tensor<T> basic_block_forward(const Tensor<T>& x, const BasicBlock<T>& block, T eps) {
  const std::size_t rank = block.spatial_rank;
  const std::size_t channel_axis = x.rank() - rank - 1;
  if (x.rank() < rank + 1 || x.dim(channel_axis) != block.in_channels) {
    throw ShapeError("basic block expects " + std::to_string(block.in_channels) + " input channels, got input " +
                     to_string(x.shape()));
  }
  Tensor<T> y = relu(instance_norm(spatial_conv(x, block.conv1, rank, block.stride, 1), eps, rank));
  y = instance_norm(spatial_conv(y, block.conv2, rank, 1, 1), eps, rank);
  Tensor<T> skip = block.has_projection()
                       ? instance_norm(spatial_conv(x, block.projection, rank, block.stride, 0), eps, rank)
                       : x;
  if (skip.shape() != y.shape()) {
    throw ShapeError("basic block residual mismatch: main path " + to_string(y.shape()) + ", skip path " +
                     to_string(skip.shape()));
  }
  return relu(add(y, skip));
}

#define SSAR_INSTANTIATE_LAYERS(T)                                                                              \
  template Tensor<T> uniform_init<T>(Shape, std::size_t, std::mt19937_64&);                                     \
  template struct LstmParams<T>;                                                                                \
  template struct LstmState<T>;                                                                                 \
  template struct BasicBlock<T>;                                                                                \
  template LstmState<T> lstm_step<T>(const Tensor<T>&, const LstmState<T>&, const LstmParams<T>&);              \
  template Tensor<T> bilstm<T>(const Tensor<T>&, const LstmParams<T>&, const LstmParams<T>&);                   \
  template Tensor<T> spatial_conv<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> basic_block_forward<T>(const Tensor<T>&, const BasicBlock<T>&, T);

SSAR_INSTANTIATE_LAYERS(float)
SSAR_INSTANTIATE_LAYERS(double)

#undef SSAR_INSTANTIATE_LAYERS

}  // namespace ssar
