#pragma once

// Row-wise layer primitives with explicit backward passes.

#include <cmath>
#include <numbers>

#include "trajvid/tensor.hpp"

namespace trajvid::nn {

template <typename S>
void linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b, Mat<S>& y) {
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
}

// Accumulates dW, db and returns dX.
template <typename S>
Mat<S> linear_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Mat<S>& dw, Mat<S>& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  return dy * w.transpose();
}

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

// Per-row normalization without affine parameters (modulation supplies them).
template <typename S>
Mat<S> layer_norm(const Mat<S>& x, LayerNormCache<S>& c, S eps = S(1e-6)) {
  const auto d = static_cast<S>(x.cols());
  const auto mean = (x.rowwise().sum() / d).eval();
  Mat<S> xc = x.colwise() - mean;
  const auto var = (xc.array().square().rowwise().sum() / d).eval();
  c.rstd = (var + eps).rsqrt().matrix();
  c.xhat = xc.array().colwise() * c.rstd.array();
  return c.xhat;
}

template <typename S>
Mat<S> layer_norm_backward(const LayerNormCache<S>& c, const Mat<S>& dxhat) {
  const auto d = static_cast<S>(dxhat.cols());
  const auto m1 = (dxhat.rowwise().sum() / d).eval();
  const auto m2 = ((dxhat.array() * c.xhat.array()).rowwise().sum() / d).eval();
  Mat<S> dx = (dxhat.array().colwise() - m1.array()) - c.xhat.array().colwise() * m2.array();
  return dx.array().colwise() * c.rstd.array();
}

// y = x * (1 + scale) + shift with per-column scale/shift.
template <typename S, typename Row>
Mat<S> modulate(const Mat<S>& x, const Row& shift, const Row& scale) {
  Mat<S> y = x.array().rowwise() * (scale.array() + S(1));
  y.rowwise() += shift;
  return y;
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <typename S>
Mat<S> gelu(const Mat<S>& x) {
  return x.unaryExpr([](S v) {
    const S u = static_cast<S>(kGeluC) * (v + S(0.044715) * v * v * v);
    return S(0.5) * v * (S(1) + std::tanh(u));
  });
}

template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
  return dy.binaryExpr(x, [](S g, S v) {
    const S u = static_cast<S>(kGeluC) * (v + S(0.044715) * v * v * v);
    const S th = std::tanh(u);
    const S du = static_cast<S>(kGeluC) * (S(1) + S(3) * S(0.044715) * v * v);
    return g * (S(0.5) * (S(1) + th) + S(0.5) * v * (S(1) - th * th) * du);
  });
}

template <typename S>
S silu(S v) {
  return v / (S(1) + std::exp(-v));
}

template <typename S>
S silu_grad(S v) {
  const S sg = S(1) / (S(1) + std::exp(-v));
  return sg * (S(1) + v * (S(1) - sg));
}

// cos/sin features of a scalar at geometric frequencies.
template <typename S>
RowVec<S> sinusoidal(double value, int dim, double max_period = 10000.0) {
  RowVec<S> out(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * i / half);
    out(i) = static_cast<S>(std::cos(value * freq));
    out(half + i) = static_cast<S>(std::sin(value * freq));
  }
  return out;
}

}  // namespace trajvid::nn
