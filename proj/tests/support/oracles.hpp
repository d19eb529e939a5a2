#pragma once

// Direct reference implementations used as test oracles. They share no code
// with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "ssar/tensor.hpp"

namespace oracle {

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline ssar::Tensor<double> random_tensor(ssar::Shape shape, std::mt19937_64& rng, bool requires_grad = false) {
  const auto n = ssar::shape_numel(shape);
  return ssar::Tensor<double>(std::move(shape), random_values(n, rng), requires_grad);
}

// a[M,K] * b[K,N]
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// Cross-correlation of x[C,H,W] with w[O,C,k,k], zero padding.
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t c, std::size_t h, std::size_t w,
                                  const std::vector<double>& kern, std::size_t o, std::size_t k, std::size_t stride,
                                  std::size_t pad, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> y(o * oh * ow, 0.0);
  for (std::size_t oc = 0; oc < o; ++oc)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0.0;
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
              const long yy = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
              const long xx = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
              s += x[(ic * h + yy) * w + xx] * kern[((oc * c + ic) * k + ki) * k + kj];
            }
        y[(oc * oh + i) * ow + j] = s;
      }
  return y;
}

// Cross-correlation of x[C,D,H,W] with w[O,C,k,k,k], zero padding.
inline std::vector<double> conv3d(const std::vector<double>& x, std::size_t c, std::size_t d, std::size_t h,
                                  std::size_t w, const std::vector<double>& kern, std::size_t o, std::size_t k,
                                  std::size_t stride, std::size_t pad, std::size_t& od, std::size_t& oh,
                                  std::size_t& ow) {
  od = (d + 2 * pad - k) / stride + 1;
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> y(o * od * oh * ow, 0.0);
  auto inside = [](long v, std::size_t e) { return v >= 0 && v < static_cast<long>(e); };
  for (std::size_t oc = 0; oc < o; ++oc)
    for (std::size_t a = 0; a < od; ++a)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t ka = 0; ka < k; ++ka)
              for (std::size_t ki = 0; ki < k; ++ki)
                for (std::size_t kj = 0; kj < k; ++kj) {
                  const long zz = static_cast<long>(a * stride + ka) - static_cast<long>(pad);
                  const long yy = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                  const long xx = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                  if (!inside(zz, d) || !inside(yy, h) || !inside(xx, w)) continue;
                  s += x[((ic * d + zz) * h + yy) * w + xx] * kern[(((oc * c + ic) * k + ka) * k + ki) * k + kj];
                }
          y[((oc * od + a) * oh + i) * ow + j] = s;
        }
  return y;
}

// (x - E[x]) / sqrt(Var[x] + eps) over one channel, population variance.
inline std::vector<double> instance_norm(const std::vector<double>& x, double eps) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> y;
  for (double v : x) y.push_back((v - mean) / std::sqrt(var + eps));
  return y;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-hidden LSTM step with scalar input.
struct ScalarLstm {
  double wix, wfx, wox, wgx, wih, wfh, woh, wgh, bi, bf, bo, bg;
  void step(double p, double& h, double& c) const {
    const double i = sigmoid(wix * p + wih * h + bi);
    const double f = sigmoid(wfx * p + wfh * h + bf);
    const double o = sigmoid(wox * p + woh * h + bo);
    const double g = std::tanh(wgx * p + wgh * h + bg);
    c = f * c + i * g;
    h = o * std::tanh(c);
  }
};

// Scalar Adam with bias correction, returns the parameter trajectory.
inline std::vector<double> adam(double theta, const std::vector<double>& grads, double lr, double b1, double b2,
                                double eps) {
  double m = 0.0, v = 0.0;
  std::vector<double> out;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
    theta -= lr * mh / (std::sqrt(vh) + eps);
    out.push_back(theta);
  }
  return out;
}

inline double brute_mae(const std::vector<double>& y, const std::vector<double>& yhat) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - yhat[i]);
  return s / static_cast<double>(y.size());
}

inline double brute_cs(const std::vector<double>& y, const std::vector<double>& yhat, double alpha) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += std::abs(y[i] - yhat[i]) <= alpha ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(y.size());
}

inline double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
