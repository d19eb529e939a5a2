#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "ssar/tensor.hpp"

namespace ssar {

inline constexpr double kInstanceNormEps = 1e-5;

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

/// Parameters in declaration order. Entries alias the owning layer's tensors.
template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), marked as requiring grad.
template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

/// Gate weights of one LSTM direction.
template <typename T>
struct LstmParams {
  Tensor<T> w_ix, w_fx, w_ox, w_gx;  // [hidden, input]
  Tensor<T> w_ih, w_fh, w_oh, w_gh;  // [hidden, hidden]
  Tensor<T> b_i, b_f, b_o, b_g;      // [hidden]

  /// Uniform weights; zero biases except b_f = 1.
  static LstmParams init(std::size_t input, std::size_t hidden, std::mt19937_64& rng);
  static LstmParams zeros(std::size_t input, std::size_t hidden);

  std::size_t input_size() const { return w_ix.dim(1); }
  std::size_t hidden_size() const { return w_ix.dim(0); }

  /// Throws ShapeError unless all twelve tensors agree on input/hidden sizes.
  void validate() const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;

  static LstmState zeros(std::size_t hidden);
};

/// One step of the gated recurrence:
///   i, f, o = sigmoid(W_*x p + W_*h h + b_*),  g = tanh(W_gx p + W_gh h + b_g)
///   c' = f * c + i * g,  h' = o * tanh(c')
template <typename T>
LstmState<T> lstm_step(const Tensor<T>& input, const LstmState<T>& state, const LstmParams<T>& params);

/// Runs `forward` over rows of `sequence` [m, input] and `backward` over the
/// reversed rows, both from zero state. Row t of the [m, 2*hidden] result is
/// concat(h_fwd[t], h_bwd[t]) with the backward outputs re-aligned to t.
template <typename T>
Tensor<T> bilstm(const Tensor<T>& sequence, const LstmParams<T>& forward, const LstmParams<T>& backward);

/// Two 3x3 (or 3x3x3) convolutions with instance norm and ReLU around a skip
/// path. The skip is a strided 1x1 convolution plus instance norm whenever the
/// stride or channel count changes, identity otherwise.
template <typename T>
struct BasicBlock {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t spatial_rank = 2;
  Tensor<T> conv1;
  Tensor<T> conv2;
  Tensor<T> projection;  // undefined for identity skips

  static BasicBlock init(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                         std::size_t spatial_rank, std::mt19937_64& rng);

  bool has_projection() const { return projection.defined(); }
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

/// Convolution for the block's dimensionality (conv2d for rank 2, conv3d for rank 3).
template <typename T>
Tensor<T> spatial_conv(const Tensor<T>& x, const Tensor<T>& weight, std::size_t spatial_rank, std::size_t stride,
                       std::size_t pad);

/// y = ReLU(IN(conv2(ReLU(IN(conv1(x))))) + skip(x))
template <typename T>
Tensor<T> basic_block_forward(const Tensor<T>& x, const BasicBlock<T>& block, T eps = T(kInstanceNormEps));

}  // namespace ssar
