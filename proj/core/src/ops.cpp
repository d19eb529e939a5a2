#include "ssar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "autograd_detail.hpp"
#include "ssar/errors.hpp"
#include "ssar/parallel.hpp"

namespace ssar {

using detail::grad_target;
using detail::record;

namespace {

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

const char* op_name(ElementwiseOp op) {
  switch (op) {
    case ElementwiseOp::Add: return "add";
    case ElementwiseOp::Sub: return "sub";
    case ElementwiseOp::Mul: return "mul";
    case ElementwiseOp::Neg: return "neg";
    case ElementwiseOp::Sigmoid: return "sigmoid";
    case ElementwiseOp::Tanh: return "tanh";
    case ElementwiseOp::Relu: return "relu";
  }
  return "elementwise";
}

bool is_binary(ElementwiseOp op) {
  return op == ElementwiseOp::Add || op == ElementwiseOp::Sub || op == ElementwiseOp::Mul;
}

}  // namespace

template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const std::string name = op_name(op);
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  auto x = a.data();

  if (is_binary(op)) {
    if (!b.defined()) throw ShapeError(name + " needs two operands");
    if (a.shape() != b.shape()) {
      throw ShapeError(name + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    auto y = b.data();
    for (std::size_t i = 0; i < n; ++i) {
      switch (op) {
        case ElementwiseOp::Add: out[i] = x[i] + y[i]; break;
        case ElementwiseOp::Sub: out[i] = x[i] - y[i]; break;
        default: out[i] = x[i] * y[i]; break;
      }
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return record<T>(a.shape(), std::move(out), name, {a, b},
                     [op, ai, bi](std::span<const T>, std::span<const T> g) {
                       T* ga = grad_target(ai);
                       T* gb = grad_target(bi);
                       const std::size_t m = g.size();
                       if (op == ElementwiseOp::Mul) {
                         if (ga) for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * bi->data[i];
                         if (gb) for (std::size_t i = 0; i < m; ++i) gb[i] += g[i] * ai->data[i];
                         return;
                       }
                       if (ga) for (std::size_t i = 0; i < m; ++i) ga[i] += g[i];
                       if (gb) {
                         if (op == ElementwiseOp::Sub) {
                           for (std::size_t i = 0; i < m; ++i) gb[i] -= g[i];
                         } else {
                           for (std::size_t i = 0; i < m; ++i) gb[i] += g[i];
                         }
                       }
                     });
  }

  for (std::size_t i = 0; i < n; ++i) {
    switch (op) {
      case ElementwiseOp::Neg: out[i] = -x[i]; break;
      case ElementwiseOp::Sigmoid: out[i] = stable_sigmoid(x[i]); break;
      case ElementwiseOp::Tanh: out[i] = std::tanh(x[i]); break;
      default: out[i] = x[i] > T(0) ? x[i] : T(0); break;
    }
  }
  auto ai = a.impl();
  return record<T>(a.shape(), std::move(out), name, {a},
                   [op, ai](std::span<const T> y, std::span<const T> g) {
                     T* ga = grad_target(ai);
                     if (!ga) return;
                     const std::size_t m = g.size();
                     switch (op) {
                       case ElementwiseOp::Neg:
                         for (std::size_t i = 0; i < m; ++i) ga[i] -= g[i];
                         break;
                       case ElementwiseOp::Sigmoid:
                         for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
                         break;
                       case ElementwiseOp::Tanh:
                         for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
                         break;
                       default:
                         // Subgradient 0 at the kink.
                         for (std::size_t i = 0; i < m; ++i) {
                           if (y[i] > T(0)) ga[i] += g[i];
                         }
                         break;
                     }
                   });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  auto xi = x.impl();
  return record<T>(x.shape(), std::move(out), "scale", {x},
                   [xi, factor](std::span<const T>, std::span<const T> g) {
                     if (T* gx = grad_target(xi)) {
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
                     }
                   });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() == 0 || b.rank() != 1 || b.dim(0) != x.shape().back()) {
    throw ShapeError("add_bias: bias " + to_string(b.shape()) + " does not match trailing extent of " +
                     to_string(x.shape()));
  }
  const std::size_t width = b.numel();
  std::vector<T> out(x.data().begin(), x.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % width];
  auto xi = x.impl();
  auto bi = b.impl();
  return record<T>(x.shape(), std::move(out), "add_bias", {x, b},
                   [xi, bi, width](std::span<const T>, std::span<const T> g) {
                     if (T* gx = grad_target(xi)) {
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     }
                     if (T* gb = grad_target(bi)) {
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i % width] += g[i];
                     }
                   });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<T> out(M * N, T(0));
  auto av = a.data();
  auto bv = b.data();
  parallel_for(0, M, [&](std::size_t i) {
    T* row = out.data() + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = av[i * K + k];
      const T* brow = bv.data() + k * N;
      for (std::size_t j = 0; j < N; ++j) row[j] += aik * brow[j];
    }
  });
  auto ai = a.impl();
  auto bi = b.impl();
  return record<T>({M, N}, std::move(out), "matmul", {a, b},
                   [ai, bi, M, K, N](std::span<const T>, std::span<const T> g) {
                     if (T* ga = grad_target(ai)) {
                       // dA = G · Bᵀ
                       const T* bd = bi->data.data();
                       parallel_for(0, M, [&](std::size_t i) {
                         for (std::size_t k = 0; k < K; ++k) {
                           T acc = 0;
                           for (std::size_t j = 0; j < N; ++j) acc += g[i * N + j] * bd[k * N + j];
                           ga[i * K + k] += acc;
                         }
                       });
                     }
                     if (T* gb = grad_target(bi)) {
                       // dB = Aᵀ · G
                       const T* ad = ai->data.data();
                       parallel_for(0, K, [&](std::size_t k) {
                         T* row = gb + k * N;
                         for (std::size_t i = 0; i < M; ++i) {
                           const T aik = ad[i * K + k];
                           for (std::size_t j = 0; j < N; ++j) row[j] += aik * g[i * N + j];
                         }
                       });
                     }
                   });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 1 || weight.rank() != 2 || weight.dim(1) != x.dim(0)) {
    throw ShapeError("linear: weight " + (weight.defined() ? to_string(weight.shape()) : std::string("?")) +
                     " incompatible with input " + to_string(x.shape()));
  }
  const std::size_t out_dim = weight.dim(0), in_dim = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match " + std::to_string(out_dim) +
                     " outputs");
  }
  auto xv = x.data();
  auto wv = weight.data();
  std::vector<T> out(out_dim);
  for (std::size_t o = 0; o < out_dim; ++o) {
    T acc = 0;
    const T* wrow = wv.data() + o * in_dim;
    for (std::size_t k = 0; k < in_dim; ++k) acc += wrow[k] * xv[k];
    out[o] = acc;
  }
  if (bias.defined()) {
    auto bv = bias.data();
    for (std::size_t o = 0; o < out_dim; ++o) out[o] += bv[o];
  }
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  auto backward = [xi, wi, bi, out_dim, in_dim](std::span<const T>, std::span<const T> g) {
    if (T* gx = grad_target(xi)) {
      for (std::size_t o = 0; o < out_dim; ++o) {
        const T* wrow = wi->data.data() + o * in_dim;
        for (std::size_t k = 0; k < in_dim; ++k) gx[k] += wrow[k] * g[o];
      }
    }
    if (T* gw = grad_target(wi)) {
      for (std::size_t o = 0; o < out_dim; ++o) {
        T* row = gw + o * in_dim;
        for (std::size_t k = 0; k < in_dim; ++k) row[k] += g[o] * xi->data[k];
      }
    }
    if (bi) {
      if (T* gb = grad_target(bi)) {
        for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[o];
      }
    }
  };
  if (bias.defined()) return record<T>({out_dim}, std::move(out), "linear", {x, weight, bias}, backward);
  return record<T>({out_dim}, std::move(out), "linear", {x, weight}, backward);
}

// ---------------------------------------------------------------------------
// Convolution and pooling. Both 2D and 3D run through one kernel that treats
// a 2D problem as depth 1.

namespace {

struct Geometry {
  std::size_t batch = 1, channels = 1;
  std::size_t in[3] = {1, 1, 1};
  std::size_t kernel[3] = {1, 1, 1};
  std::size_t stride[3] = {1, 1, 1};
  std::size_t pad[3] = {0, 0, 0};
  std::size_t out[3] = {1, 1, 1};

  std::size_t in_size() const { return in[0] * in[1] * in[2]; }
  std::size_t out_size() const { return out[0] * out[1] * out[2]; }
  std::size_t kernel_size() const { return kernel[0] * kernel[1] * kernel[2]; }
};

void compute_output_extents(Geometry& g, const std::string& op) {
  for (int d = 0; d < 3; ++d) {
    const std::size_t padded = g.in[d] + 2 * g.pad[d];
    if (g.kernel[d] > padded) {
      throw ShapeError(op + ": kernel larger than padded input (kernel " + std::to_string(g.kernel[d]) +
                       ", padded extent " + std::to_string(padded) + ")");
    }
    g.out[d] = (padded - g.kernel[d]) / g.stride[d] + 1;
  }
}

/// Rows: (c, kz, ky, kx); columns: output positions (oz, oy, ox).
template <typename T>
void im2col(const T* x, const Geometry& g, T* col) {
  const std::size_t P = g.out_size();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = x + c * g.in_size();
    for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
      for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel[2]; ++kx, ++row) {
          T* dst = col + row * P;
          for (std::size_t oz = 0; oz < g.out[0]; ++oz) {
            const long iz = static_cast<long>(oz * g.stride[0] + kz) - static_cast<long>(g.pad[0]);
            const bool z_ok = iz >= 0 && iz < static_cast<long>(g.in[0]);
            for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
              const long iy = static_cast<long>(oy * g.stride[1] + ky) - static_cast<long>(g.pad[1]);
              const bool zy_ok = z_ok && iy >= 0 && iy < static_cast<long>(g.in[1]);
              T* d = dst + (oz * g.out[1] + oy) * g.out[2];
              if (!zy_ok) {
                std::fill(d, d + g.out[2], T(0));
                continue;
              }
              const T* src = plane + (static_cast<std::size_t>(iz) * g.in[1] + static_cast<std::size_t>(iy)) * g.in[2];
              for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
                const long ix = static_cast<long>(ox * g.stride[2] + kx) - static_cast<long>(g.pad[2]);
                d[ox] = (ix >= 0 && ix < static_cast<long>(g.in[2])) ? src[ix] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const Geometry& g, T* dx) {
  const std::size_t P = g.out_size();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = dx + c * g.in_size();
    for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
      for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel[2]; ++kx, ++row) {
          const T* src = col + row * P;
          for (std::size_t oz = 0; oz < g.out[0]; ++oz) {
            const long iz = static_cast<long>(oz * g.stride[0] + kz) - static_cast<long>(g.pad[0]);
            if (iz < 0 || iz >= static_cast<long>(g.in[0])) continue;
            for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
              const long iy = static_cast<long>(oy * g.stride[1] + ky) - static_cast<long>(g.pad[1]);
              if (iy < 0 || iy >= static_cast<long>(g.in[1])) continue;
              const T* s = src + (oz * g.out[1] + oy) * g.out[2];
              T* d = plane + (static_cast<std::size_t>(iz) * g.in[1] + static_cast<std::size_t>(iy)) * g.in[2];
              for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
                const long ix = static_cast<long>(ox * g.stride[2] + kx) - static_cast<long>(g.pad[2]);
                if (ix >= 0 && ix < static_cast<long>(g.in[2])) d[ix] += s[ox];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv_nd(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, std::size_t pad,
                  std::size_t spatial, const std::string& op) {
  if (stride == 0) throw ShapeError(op + ": stride must be positive");
  const std::size_t xr = x.rank();
  if (xr != spatial + 1 && xr != spatial + 2) {
    throw ShapeError(op + ": expected input of rank " + std::to_string(spatial + 1) + " or " +
                     std::to_string(spatial + 2) + ", got " + to_string(x.shape()));
  }
  if (weight.rank() != spatial + 2) {
    throw ShapeError(op + ": expected weight of rank " + std::to_string(spatial + 2) + ", got " +
                     to_string(weight.shape()));
  }
  const bool batched = xr == spatial + 2;
  Geometry g;
  g.batch = batched ? x.dim(0) : 1;
  g.channels = x.dim(batched ? 1 : 0);
  if (weight.dim(1) != g.channels) {
    throw ShapeError(op + ": weight " + to_string(weight.shape()) + " expects " + std::to_string(weight.dim(1)) +
                     " input channels, input " + to_string(x.shape()) + " has " + std::to_string(g.channels));
  }
  const std::size_t first = 3 - spatial;
  for (std::size_t d = 0; d < spatial; ++d) {
    g.in[first + d] = x.shape()[xr - spatial + d];
    g.kernel[first + d] = weight.dim(2 + d);
    g.stride[first + d] = stride;
    g.pad[first + d] = pad;
  }
  compute_output_extents(g, op);

  const std::size_t O = weight.dim(0), K = g.channels * g.kernel_size(), P = g.out_size();
  const std::size_t in_stride = g.channels * g.in_size();
  std::vector<T> out(g.batch * O * P, T(0));
  auto xv = x.data();
  auto wv = weight.data();

  auto forward_one = [&](std::size_t n) {
    std::vector<T> col(K * P);
    im2col(xv.data() + n * in_stride, g, col.data());
    T* dst = out.data() + n * O * P;
    for (std::size_t o = 0; o < O; ++o) {
      T* orow = dst + o * P;
      const T* wrow = wv.data() + o * K;
      for (std::size_t r = 0; r < K; ++r) {
        const T w = wrow[r];
        const T* crow = col.data() + r * P;
        for (std::size_t p = 0; p < P; ++p) orow[p] += w * crow[p];
      }
    }
  };
  if (g.batch > 1) {
    parallel_for(0, g.batch, forward_one);
  } else {
    std::vector<T> col(K * P);
    im2col(xv.data(), g, col.data());
    parallel_for(0, O, [&](std::size_t o) {
      T* orow = out.data() + o * P;
      const T* wrow = wv.data() + o * K;
      for (std::size_t r = 0; r < K; ++r) {
        const T w = wrow[r];
        const T* crow = col.data() + r * P;
        for (std::size_t p = 0; p < P; ++p) orow[p] += w * crow[p];
      }
    });
  }

  Shape out_shape;
  if (batched) out_shape.push_back(g.batch);
  out_shape.push_back(O);
  for (std::size_t d = 0; d < spatial; ++d) out_shape.push_back(g.out[first + d]);

  auto xi = x.impl();
  auto wi = weight.impl();
  return record<T>(std::move(out_shape), std::move(out), op, {x, weight},
                   [xi, wi, g, O, K, P, in_stride](std::span<const T>, std::span<const T> gout) {
                     T* gx = grad_target(xi);
                     T* gw = grad_target(wi);
                     const T* w = wi->data.data();
                     std::vector<T> col(K * P);
                     std::vector<T> col_t;
                     if (gw) col_t.resize(P * K);
                     for (std::size_t n = 0; n < g.batch; ++n) {
                       const T* go = gout.data() + n * O * P;
                       if (gw) {
                         im2col(xi->data.data() + n * in_stride, g, col.data());
                         for (std::size_t r = 0; r < K; ++r)
                           for (std::size_t p = 0; p < P; ++p) col_t[p * K + r] = col[r * P + p];
                         parallel_for(0, O, [&](std::size_t o) {
                           T* wrow = gw + o * K;
                           const T* grow = go + o * P;
                           for (std::size_t p = 0; p < P; ++p) {
                             const T gv = grow[p];
                             const T* crow = col_t.data() + p * K;
                             for (std::size_t r = 0; r < K; ++r) wrow[r] += gv * crow[r];
                           }
                         });
                       }
                       if (gx) {
                         std::fill(col.begin(), col.end(), T(0));
                         parallel_for(0, K, [&](std::size_t r) {
                           T* crow = col.data() + r * P;
                           for (std::size_t o = 0; o < O; ++o) {
                             const T wv = w[o * K + r];
                             const T* grow = go + o * P;
                             for (std::size_t p = 0; p < P; ++p) crow[p] += wv * grow[p];
                           }
                         });
                         col2im_add(col.data(), g, gx + n * in_stride);
                       }
                     }
                   });
}

template <typename T>
Tensor<T> max_pool_nd(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t pad,
                      std::size_t spatial, const std::string& op) {
  if (kernel == 0 || stride == 0) throw ShapeError(op + ": kernel and stride must be positive");
  if (2 * pad > kernel) throw ShapeError(op + ": padding must not exceed half the kernel");
  if (x.rank() < spatial) throw ShapeError(op + ": input " + to_string(x.shape()) + " has too few axes");
  Geometry g;
  const std::size_t first = 3 - spatial;
  const std::size_t xr = x.rank();
  for (std::size_t d = 0; d < spatial; ++d) {
    g.in[first + d] = x.shape()[xr - spatial + d];
    g.kernel[first + d] = kernel;
    g.stride[first + d] = stride;
    g.pad[first + d] = pad;
  }
  compute_output_extents(g, op);
  const std::size_t planes = x.numel() / g.in_size();
  const std::size_t P = g.out_size();
  std::vector<T> out(planes * P);
  std::vector<std::size_t> argmax(planes * P);
  auto xv = x.data();
  parallel_for(0, planes, [&](std::size_t pl) {
    const T* src = xv.data() + pl * g.in_size();
    for (std::size_t oz = 0; oz < g.out[0]; ++oz)
      for (std::size_t oy = 0; oy < g.out[1]; ++oy)
        for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
            const long iz = static_cast<long>(oz * g.stride[0] + kz) - static_cast<long>(g.pad[0]);
            if (iz < 0 || iz >= static_cast<long>(g.in[0])) continue;
            for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
              const long iy = static_cast<long>(oy * g.stride[1] + ky) - static_cast<long>(g.pad[1]);
              if (iy < 0 || iy >= static_cast<long>(g.in[1])) continue;
              for (std::size_t kx = 0; kx < g.kernel[2]; ++kx) {
                const long ix = static_cast<long>(ox * g.stride[2] + kx) - static_cast<long>(g.pad[2]);
                if (ix < 0 || ix >= static_cast<long>(g.in[2])) continue;
                const std::size_t idx = (static_cast<std::size_t>(iz) * g.in[1] + static_cast<std::size_t>(iy)) * g.in[2] +
                                        static_cast<std::size_t>(ix);
                if (src[idx] > best) {
                  best = src[idx];
                  best_idx = idx;
                }
              }
            }
          }
          const std::size_t o = pl * P + (oz * g.out[1] + oy) * g.out[2] + ox;
          out[o] = best;
          argmax[o] = pl * g.in_size() + best_idx;
        }
  });
  Shape out_shape(x.shape().begin(), x.shape().end() - static_cast<long>(spatial));
  for (std::size_t d = 0; d < spatial; ++d) out_shape.push_back(g.out[first + d]);
  auto xi = x.impl();
  return record<T>(std::move(out_shape), std::move(out), op, {x},
                   [xi, argmax = std::move(argmax)](std::span<const T>, std::span<const T> gout) {
                     if (T* gx = grad_target(xi)) {
                       for (std::size_t o = 0; o < gout.size(); ++o) gx[argmax[o]] += gout[o];
                     }
                   });
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, std::size_t pad) {
  return conv_nd(x, weight, stride, pad, 2, "conv2d");
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, std::size_t pad) {
  return conv_nd(x, weight, stride, pad, 3, "conv3d");
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  return max_pool_nd(x, kernel, stride, pad, 2, "max_pool2d");
}

template <typename T>
Tensor<T> max_pool3d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  return max_pool_nd(x, kernel, stride, pad, 3, "max_pool3d");
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, std::vector<std::size_t> axes) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (auto a : axes) {
    if (a >= rank) {
      throw ShapeError("reduce: axis " + std::to_string(a) + " invalid for shape " + to_string(in_shape));
    }
  }
  std::vector<bool> reduced(rank, false);
  for (auto a : axes) reduced[a] = true;
  Shape out_shape;
  for (std::size_t d = 0; d < rank; ++d) {
    if (!reduced[d]) out_shape.push_back(in_shape[d]);
  }

  // Output index of every input element, via an odometer over the input.
  const std::size_t n = x.numel();
  std::vector<std::size_t> out_stride(rank, 0);
  {
    std::size_t s = 1;
    for (std::size_t d = rank; d-- > 0;) {
      if (!reduced[d]) {
        out_stride[d] = s;
        s *= in_shape[d];
      }
    }
  }
  std::vector<std::size_t> target(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < in_shape[d]) {
        offset += out_stride[d];
        break;
      }
      offset -= out_stride[d] * (in_shape[d] - 1);
      idx[d] = 0;
    }
  }

  const std::size_t out_n = shape_numel(out_shape);
  const std::size_t count = n / out_n;
  auto xv = x.data();
  std::vector<T> out(out_n, T(0));
  std::vector<std::size_t> argmax;
  if (op == ReduceOp::Max) {
    std::vector<bool> seen(out_n, false);
    argmax.assign(out_n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t o = target[i];
      if (!seen[o] || xv[i] > out[o]) {
        out[o] = xv[i];
        argmax[o] = i;
        seen[o] = true;
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out[target[i]] += xv[i];
    if (op == ReduceOp::Mean) {
      for (auto& v : out) v /= static_cast<T>(count);
    }
  }

  const char* name = op == ReduceOp::Max ? "reduce_max" : (op == ReduceOp::Sum ? "reduce_sum" : "reduce_mean");
  auto xi = x.impl();
  return record<T>(std::move(out_shape), std::move(out), name, {x},
                   [xi, op, count, target = std::move(target), argmax = std::move(argmax)](
                       std::span<const T>, std::span<const T> g) {
                     T* gx = grad_target(xi);
                     if (!gx) return;
                     if (op == ReduceOp::Max) {
                       for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
                       return;
                     }
                     const T factor = op == ReduceOp::Mean ? T(1) / static_cast<T>(count) : T(1);
                     for (std::size_t i = 0; i < target.size(); ++i) gx[i] += g[target[i]] * factor;
                   });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return reduce(ReduceOp::Sum, x, std::move(axes));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return reduce(ReduceOp::Mean, x, std::move(axes));
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps, std::size_t spatial_rank) {
  if (!(eps > T(0))) throw ConfigError("instance_norm: eps must be positive");
  if (spatial_rank == 0 || spatial_rank > x.rank()) {
    throw ShapeError("instance_norm: spatial rank " + std::to_string(spatial_rank) + " invalid for shape " +
                     to_string(x.shape()));
  }
  std::size_t group = 1;
  for (std::size_t d = x.rank() - spatial_rank; d < x.rank(); ++d) group *= x.dim(d);
  const std::size_t groups = x.numel() / group;
  auto xv = x.data();
  std::vector<T> out(x.numel());
  std::vector<T> inv_std(groups);
  parallel_for(0, groups, [&](std::size_t gi) {
    const T* src = xv.data() + gi * group;
    double mu = 0;
    for (std::size_t i = 0; i < group; ++i) mu += src[i];
    mu /= static_cast<double>(group);
    double var = 0;
    for (std::size_t i = 0; i < group; ++i) {
      const double d = src[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(group);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[gi] = static_cast<T>(inv);
    T* dst = out.data() + gi * group;
    for (std::size_t i = 0; i < group; ++i) dst[i] = static_cast<T>((src[i] - mu) * inv);
  });
  auto xi = x.impl();
  return record<T>(x.shape(), std::move(out), "instance_norm", {x},
                   [xi, group, groups, inv_std = std::move(inv_std)](std::span<const T> y, std::span<const T> g) {
                     T* gx = grad_target(xi);
                     if (!gx) return;
                     // dx = inv * (g - mean(g) - y * mean(g * y)), y the normalized output.
                     parallel_for(0, groups, [&](std::size_t gi) {
                       const T* gy = g.data() + gi * group;
                       const T* yy = y.data() + gi * group;
                       double mean_g = 0, mean_gy = 0;
                       for (std::size_t i = 0; i < group; ++i) {
                         mean_g += gy[i];
                         mean_gy += static_cast<double>(gy[i]) * yy[i];
                       }
                       mean_g /= static_cast<double>(group);
                       mean_gy /= static_cast<double>(group);
                       const double inv = inv_std[gi];
                       T* dst = gx + gi * group;
                       for (std::size_t i = 0; i < group; ++i) {
                         dst[i] += static_cast<T>(inv * (gy[i] - mean_g - yy[i] * mean_gy));
                       }
                     });
                   });
}

template <typename T>
Tensor<T> seq_avg_pool(const Tensor<T>& sequence, std::size_t k) {
  if (k == 0) throw ConfigError("seq_avg_pool: kernel must be positive");
  if (sequence.rank() != 2) {
    throw ShapeError("seq_avg_pool: expected [n, d] sequence, got " + to_string(sequence.shape()));
  }
  const std::size_t n = sequence.dim(0), d = sequence.dim(1);
  if (n < k) {
    throw ShapeError("sequence shorter than pooling kernel (n=" + std::to_string(n) + ", k=" + std::to_string(k) +
                     ")");
  }
  const std::size_t m = n / k;
  auto sv = sequence.data();
  std::vector<T> out(m * d, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* dst = out.data() + i * d;
    for (std::size_t j = 0; j < k; ++j) {
      const T* src = sv.data() + (i * k + j) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
    for (std::size_t c = 0; c < d; ++c) dst[c] /= static_cast<T>(k);
  }
  auto si = sequence.impl();
  return record<T>({m, d}, std::move(out), "seq_avg_pool", {sequence},
                   [si, m, k, d](std::span<const T>, std::span<const T> g) {
                     T* gs = grad_target(si);
                     if (!gs) return;
                     const T factor = T(1) / static_cast<T>(k);
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < k; ++j)
                         for (std::size_t c = 0; c < d; ++c) gs[(i * k + j) * d + c] += g[i * d + c] * factor;
                   });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xi = x.impl();
  return record<T>(std::move(shape), std::move(out), "reshape", {x},
                   [xi](std::span<const T>, std::span<const T> g) {
                     if (T* gx = grad_target(xi)) {
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     }
                   });
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t index) {
  if (x.rank() == 0 || index >= x.dim(0)) {
    throw ShapeError("select: index " + std::to_string(index) + " out of range for " + to_string(x.shape()));
  }
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t width = shape_numel(shape);
  auto xv = x.data();
  std::vector<T> out(xv.begin() + static_cast<long>(index * width), xv.begin() + static_cast<long>((index + 1) * width));
  auto xi = x.impl();
  return record<T>(std::move(shape), std::move(out), "select", {x},
                   [xi, index, width](std::span<const T>, std::span<const T> g) {
                     if (T* gx = grad_target(xi)) {
                       for (std::size_t i = 0; i < width; ++i) gx[index * width + i] += g[i];
                     }
                   });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no tensors");
  const Shape& ref = parts.front().shape();
  if (ref.empty()) throw ShapeError("concat: rank-0 tensors cannot be joined along axis 0");
  std::size_t lead = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size() || !std::equal(s.begin() + 1, s.end(), ref.begin() + 1)) {
      throw ShapeError("concat: shape " + to_string(s) + " incompatible with " + to_string(ref));
    }
    lead += s[0];
  }
  Shape shape = ref;
  shape[0] = lead;
  std::vector<T> out;
  out.reserve(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    impls.push_back(p.impl());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return record<T>(std::move(shape), std::move(out), "concat", parts,
                   [impls, offsets](std::span<const T>, std::span<const T> g) {
                     for (std::size_t k = 0; k < impls.size(); ++k) {
                       if (T* gp = grad_target(impls[k])) {
                         const std::size_t len = impls[k]->data.size();
                         for (std::size_t i = 0; i < len; ++i) gp[i] += g[offsets[k] + i];
                       }
                     }
                   });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no tensors");
  const Shape& ref = parts.front().shape();
  for (const auto& p : parts) {
    if (p.shape() != ref) throw ShapeError("stack: shape " + to_string(p.shape()) + " differs from " + to_string(ref));
  }
  Shape shape;
  shape.push_back(parts.size());
  shape.insert(shape.end(), ref.begin(), ref.end());
  std::vector<T> out;
  out.reserve(shape_numel(shape));
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  const std::size_t width = shape_numel(ref);
  return record<T>(std::move(shape), std::move(out), "stack", parts,
                   [impls, width](std::span<const T>, std::span<const T> g) {
                     for (std::size_t k = 0; k < impls.size(); ++k) {
                       if (T* gp = grad_target(impls[k])) {
                         for (std::size_t i = 0; i < width; ++i) gp[i] += g[k * width + i];
                       }
                     }
                   });
}

#define SSAR_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> elementwise<T>(ElementwiseOp, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                               \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);     \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);     \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);      \
  template Tensor<T> max_pool3d<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);      \
  template Tensor<T> reduce<T>(ReduceOp, const Tensor<T>&, std::vector<std::size_t>);             \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                    \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                   \
  template Tensor<T> instance_norm<T>(const Tensor<T>&, T, std::size_t);                          \
  template Tensor<T> seq_avg_pool<T>(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                         \
  template Tensor<T> select<T>(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> stack<T>(const std::vector<Tensor<T>>&);

SSAR_INSTANTIATE_OPS(float)
SSAR_INSTANTIATE_OPS(double)

#undef SSAR_INSTANTIATE_OPS

}  // namespace ssar
