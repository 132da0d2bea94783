#pragma once

// Differentiable operations on Var<T>: convolution, transposed convolution,
// dense layers, activations, losses, and the straight-through rounding node.
//
// Layouts follow the usual NCHW convention. conv2d kernels are [F, C, kh, kw]
// (C input channels -> F output channels); conv_transpose2d takes the same
// kernel layout and maps F channels back to C, so it is the exact adjoint of
// conv2d with identical stride and padding.

#include <Eigen/Core>

#include <cmath>
#include <string>

#include "cloak/tensor.hpp"

namespace cloak::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

/// dst (+)= a * b. Eigen routes products with a single output row or column
/// to GEMV, whose summation order depends on buffer alignment; those go
/// through a fixed-order loop so results are bit-reproducible run to run.
template <class T, class A, class B>
void product(MatMap<T> dst, const A& a, const B& b, bool accumulate) {
  if (dst.rows() == 1 || dst.cols() == 1) {
    for (Eigen::Index i = 0; i < dst.rows(); ++i)
      for (Eigen::Index j = 0; j < dst.cols(); ++j) {
        T s = 0;
        for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
        dst(i, j) = accumulate ? dst(i, j) + s : s;
      }
  } else if (accumulate) {
    dst.noalias() += a * b;
  } else {
    dst.noalias() = a * b;
  }
}

}  // namespace detail

struct ConvGeometry {
  std::size_t n, c, h, w;  // input of the forward convolution
  std::size_t f, kh, kw;
  std::size_t stride, pad;
  std::size_t oh, ow;      // output of the forward convolution

  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

/// Unfolds x [N,C,H,W] into cols [C*kh*kw, N*oh*ow].
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t P = g.positions();
  const std::size_t NP = g.n * P;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * NP;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* plane = x + (n * g.c + c) * g.h * g.w;
          T* dst = row + n * P;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t xx =
                  static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
              const bool in = y >= 0 && y < static_cast<std::ptrdiff_t>(g.h) && xx >= 0 &&
                              xx < static_cast<std::ptrdiff_t>(g.w);
              dst[oy * g.ow + ox] = in ? plane[y * g.w + xx] : T(0);
            }
          }
        }
      }
}

/// Adjoint of im2col: scatters-adds cols back into x [N,C,H,W].
template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
  const std::size_t P = g.positions();
  const std::size_t NP = g.n * P;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * NP;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* plane = x + (n * g.c + c) * g.h * g.w;
          const T* src = row + n * P;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t xx =
                  static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) continue;
              plane[y * g.w + xx] += src[oy * g.ow + ox];
            }
          }
        }
      }
}

/// [N, F, P] <-> [F, N*P] layout shuffles.
template <class T>
void nfp_to_fnp(const T* src, std::size_t n, std::size_t f, std::size_t p, T* dst) {
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < f; ++b) std::copy_n(src + (a * f + b) * p, p, dst + b * n * p + a * p);
}
template <class T>
void fnp_to_nfp(const T* src, std::size_t n, std::size_t f, std::size_t p, T* dst) {
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < f; ++b) std::copy_n(src + b * n * p + a * p, p, dst + (a * f + b) * p);
}

template <class T, class Fwd, class Bwd>
Var<T> unary(const Var<T>& x, Fwd fwd, Bwd dfdx) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return Var<T>::make(std::move(out), {x}, [x, dfdx](Node<T>& self) mutable {
    if (!x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const auto& xv = x.value();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
  });
}

}  // namespace detail

inline ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t pad) {
  detail::require(input.size() == 4 && kernel.size() == 4, "conv2d: expected 4-d input and kernel");
  detail::require(input[1] == kernel[1], "conv2d: channel mismatch " + shape_str(input) + " vs " + shape_str(kernel));
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  detail::require(input[2] + 2 * pad >= kernel[2] && input[3] + 2 * pad >= kernel[3], "conv2d: kernel larger than input");
  ConvGeometry g{input[0], input[1], input[2], input[3], kernel[0], kernel[2], kernel[3], stride, pad, 0, 0};
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

/// Cross-correlation of x [N,C,H,W] with kernel [F,C,kh,kw].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t stride, std::size_t pad) {
  const ConvGeometry g = conv_geometry(x.shape(), kernel.shape(), stride, pad);
  const std::size_t NP = g.n * g.positions();
  auto cols = std::make_shared<std::vector<T>>(g.patch() * NP);
  detail::im2col(x.value().data(), g, cols->data());

  std::vector<T> fnp(g.f * NP);
  detail::product(MatMap<T>(fnp.data(), g.f, NP), ConstMatMap<T>(kernel.value().data(), g.f, g.patch()),
                  ConstMatMap<T>(cols->data(), g.patch(), NP), false);
  Tensor<T> out({g.n, g.f, g.oh, g.ow});
  detail::fnp_to_nfp(fnp.data(), g.n, g.f, g.positions(), out.data());

  return Var<T>::make(std::move(out), {x, kernel}, [x, kernel, g, cols](Node<T>& self) mutable {
    const std::size_t NP = g.n * g.positions();
    std::vector<T> gout(g.f * NP);
    detail::nfp_to_fnp(self.grad.data(), g.n, g.f, g.positions(), gout.data());
    ConstMatMap<T> gm(gout.data(), g.f, NP);
    if (kernel.requires_grad()) {
      detail::product(MatMap<T>(kernel.grad_buffer().data(), g.f, g.patch()), gm,
                      ConstMatMap<T>(cols->data(), g.patch(), NP).transpose(), true);
    }
    if (x.requires_grad()) {
      std::vector<T> dcols(g.patch() * NP);
      detail::product(MatMap<T>(dcols.data(), g.patch(), NP),
                      ConstMatMap<T>(kernel.value().data(), g.f, g.patch()).transpose(), gm, false);
      detail::col2im(dcols.data(), g, x.grad_buffer().data());
    }
  });
}

/// Output spatial size of conv_transpose2d: (in - 1) * stride + k - 2 * pad.
inline std::size_t conv_transpose_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t full = (in - 1) * stride + k;
  detail::require(full > 2 * pad, "conv_transpose2d: padding exceeds output");
  return full - 2 * pad;
}

/// Transposed convolution of x [N,F,H',W'] with kernel [F,C,kh,kw] -> [N,C,H,W].
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& kernel, std::size_t stride, std::size_t pad) {
  const auto& xs = x.shape();
  const auto& ks = kernel.shape();
  detail::require(xs.size() == 4 && ks.size() == 4, "conv_transpose2d: expected 4-d input and kernel");
  detail::require(xs[1] == ks[0], "conv_transpose2d: channel mismatch " + shape_str(xs) + " vs " + shape_str(ks));
  detail::require(stride >= 1, "conv_transpose2d: stride must be >= 1");
  ConvGeometry g{xs[0], ks[1], conv_transpose_size(xs[2], ks[2], stride, pad),
                 conv_transpose_size(xs[3], ks[3], stride, pad), ks[0], ks[2], ks[3], stride, pad, xs[2], xs[3]};
  const std::size_t NP = g.n * g.positions();

  auto xin = std::make_shared<std::vector<T>>(g.f * NP);
  detail::nfp_to_fnp(x.value().data(), g.n, g.f, g.positions(), xin->data());
  std::vector<T> cols(g.patch() * NP);
  detail::product(MatMap<T>(cols.data(), g.patch(), NP), ConstMatMap<T>(kernel.value().data(), g.f, g.patch()).transpose(),
                  ConstMatMap<T>(xin->data(), g.f, NP), false);
  Tensor<T> out({g.n, g.c, g.h, g.w});
  detail::col2im(cols.data(), g, out.data());

  return Var<T>::make(std::move(out), {x, kernel}, [x, kernel, g, xin](Node<T>& self) mutable {
    const std::size_t NP = g.n * g.positions();
    std::vector<T> gcols(g.patch() * NP);
    detail::im2col(self.grad.data(), g, gcols.data());
    ConstMatMap<T> gc(gcols.data(), g.patch(), NP);
    if (kernel.requires_grad()) {
      detail::product(MatMap<T>(kernel.grad_buffer().data(), g.f, g.patch()), ConstMatMap<T>(xin->data(), g.f, NP),
                      gc.transpose(), true);
    }
    if (x.requires_grad()) {
      std::vector<T> gin(g.f * NP);
      detail::product(MatMap<T>(gin.data(), g.f, NP), ConstMatMap<T>(kernel.value().data(), g.f, g.patch()), gc, false);
      auto& gx = x.grad_buffer();
      std::vector<T> tmp(gx.size());
      detail::fnp_to_nfp(gin.data(), g.n, g.f, g.positions(), tmp.data());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
    }
  });
}

/// x [N,D] * weight [D,K] + bias [K].
template <class T>
Var<T> dense(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  detail::require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[0],
                  "dense: shape mismatch " + shape_str(xs) + " x " + shape_str(ws));
  detail::require(bias.shape().size() == 1 && bias.shape()[0] == ws[1], "dense: bias shape mismatch");
  const std::size_t N = xs[0], D = ws[0], K = ws[1];
  Tensor<T> out({N, K});
  if (N > 0) {
    auto om = MatMap<T>(out.data(), N, K);
    detail::product(om, ConstMatMap<T>(x.value().data(), N, D), ConstMatMap<T>(weight.value().data(), D, K), false);
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(), K);
  }
  return Var<T>::make(std::move(out), {x, weight, bias}, [x, weight, bias, N, D, K](Node<T>& self) mutable {
    if (N == 0) return;
    ConstMatMap<T> g(self.grad.data(), N, K);
    if (weight.requires_grad())
      detail::product(MatMap<T>(weight.grad_buffer().data(), D, K), ConstMatMap<T>(x.value().data(), N, D).transpose(), g,
                      true);
    if (bias.requires_grad())
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < K; ++k) bias.grad_buffer()[k] += g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    if (x.requires_grad())
      detail::product(MatMap<T>(x.grad_buffer().data(), N, D), g, ConstMatMap<T>(weight.value().data(), D, K).transpose(),
                      true);
  });
}

/// Adds a per-channel bias [C] to x [N,C,H,W].
template <class T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
  const auto& xs = x.shape();
  detail::require(xs.size() == 4 && bias.shape().size() == 1 && bias.shape()[0] == xs[1],
                  "add_channel_bias: shape mismatch " + shape_str(xs) + " + " + shape_str(bias.shape()));
  const std::size_t N = xs[0], C = xs[1], P = xs[2] * xs[3];
  Tensor<T> out = x.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      T* dst = out.data() + (n * C + c) * P;
      const T b = bias.value()[c];
      for (std::size_t k = 0; k < P; ++k) dst[k] += b;
    }
  return Var<T>::make(std::move(out), {x, bias}, [x, bias, N, C, P](Node<T>& self) mutable {
    if (x.requires_grad()) {
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    }
    if (bias.requires_grad()) {
      auto& gb = bias.grad_buffer();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T* src = self.grad.data() + (n * C + c) * P;
          T acc = 0;
          for (std::size_t k = 0; k < P; ++k) acc += src[k];
          gb[c] += acc;
        }
    }
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return Var<T>::make(std::move(out), {x}, [x](Node<T>& self) mutable {
    if (!x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return detail::unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
T sigmoid_scalar(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// exp(a + b x) elementwise; maps a standardized log-target back to raw scale.
template <class T>
Var<T> exp_affine(const Var<T>& x, T a, T b) {
  return detail::unary(x, [a, b](T v) { return std::exp(a + b * v); }, [b](T, T y) { return b * y; });
}

/// Backward factor of the straight-through rounding: s (1 - s) with
/// s = 1 / (1 + exp(-10 (x - 0.5))).
template <class T>
T st_round_factor(T x) {
  const T s = sigmoid_scalar(T(10) * (x - T(0.5)));
  return s * (T(1) - s);
}

/// Rounds to nearest (0.5 -> 1) in the forward pass; the backward pass uses
/// the derivative of a steep sigmoid centred at 0.5.
template <class T>
Var<T> st_round(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::floor(v + T(0.5)); }, [](T v, T) { return st_round_factor(v); });
}

/// Multiplies x by a constant tensor broadcast over the leading axis
/// (mask.size() must divide x.size()).
template <class T>
Var<T> mul_const(const Var<T>& x, const Tensor<T>& mask) {
  const std::size_t m = mask.size();
  detail::require(m > 0 && x.value().size() % m == 0, "mul_const: mask does not tile input");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i % m];
  return Var<T>::make(std::move(out), {x}, [x, mask, m](Node<T>& self) mutable {
    if (!x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i % m];
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  const std::size_t n = x.value().size();
  detail::require(n > 0, "mean: empty tensor");
  T s = 0;
  for (auto v : x.value().vec()) s += v;
  return Var<T>::make(Tensor<T>({1}, {s / T(n)}), {x}, [x, n](Node<T>& self) mutable {
    if (!x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const T g = self.grad[0] / T(n);
    for (auto& v : gx.vec()) v += g;
  });
}

/// a * ca + b * cb for two same-shaped inputs.
template <class T>
Var<T> weighted_sum(const Var<T>& a, T ca, const Var<T>& b, T cb) {
  detail::require(a.shape() == b.shape(), "weighted_sum: shape mismatch");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ca * a.value()[i] + cb * b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [a, b, ca, cb](Node<T>& self) mutable {
    if (a.requires_grad()) {
      auto& g = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += ca * self.grad[i];
    }
    if (b.requires_grad()) {
      auto& g = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += cb * self.grad[i];
    }
  });
}

inline constexpr double kProbabilityClamp = 1e-7;

/// Binary cross-entropy -(1/N) sum[y log p + (1-y) log(1-p)], p clamped to
/// [1e-7, 1 - 1e-7]. The clamp has zero gradient outside its range.
template <class T>
Var<T> bce_loss(const Var<T>& p, const Tensor<T>& y) {
  detail::require(p.value().size() == y.size(), "bce_loss: size mismatch");
  const std::size_t n = y.size();
  detail::require(n > 0, "bce_loss: empty batch");
  const T lo = T(kProbabilityClamp), hi = T(1) - T(kProbabilityClamp);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T q = std::clamp(p.value()[i], lo, hi);
    loss -= y[i] * std::log(q) + (T(1) - y[i]) * std::log(T(1) - q);
  }
  return Var<T>::make(Tensor<T>({1}, {loss / T(n)}), {p}, [p, y, n, lo, hi](Node<T>& self) mutable {
    if (!p.requires_grad()) return;
    auto& gp = p.grad_buffer();
    const T g = self.grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T v = p.value()[i];
      if (v < lo || v > hi) continue;
      gp[i] += g * (-y[i] / v + (T(1) - y[i]) / (T(1) - v));
    }
  });
}

/// Mean squared error over all elements.
template <class T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target) {
  detail::require(pred.value().size() == target.size(), "mse_loss: size mismatch");
  const std::size_t n = target.size();
  detail::require(n > 0, "mse_loss: empty batch");
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred.value()[i] - target[i];
    loss += d * d;
  }
  return Var<T>::make(Tensor<T>({1}, {loss / T(n)}), {pred}, [pred, target, n](Node<T>& self) mutable {
    if (!pred.requires_grad()) return;
    auto& g = pred.grad_buffer();
    const T s = T(2) * self.grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += s * (pred.value()[i] - target[i]);
  });
}

}  // namespace cloak::nn
