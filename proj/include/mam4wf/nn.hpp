#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mam4wf/errors.hpp"
#include "mam4wf/rng.hpp"
#include "mam4wf/tensor.hpp"

namespace mam4wf::nn {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param(std::string n, std::vector<int64_t> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

template <typename T>
using ParamVisitor = std::function<void(Param<T>&)>;

template <typename T>
using RowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// 2-D convolution, NCHW, weight (Cout, Cin/groups, k, k). Forward runs
// grouped im2col + GEMM with a direct fast path for 1x1/stride-1; backward
// produces input gradients and accumulates parameter gradients. The im2col
// buffer from the last forward is kept for the weight-gradient GEMM, so a
// layer instance serves one forward/backward stream at a time.
template <typename T>
class Conv2d {
 public:
  Conv2d(std::string name, int64_t in_c, int64_t out_c, int64_t kernel,
         int64_t stride, int64_t pad, int64_t groups = 1)
      : in_c_(in_c),
        out_c_(out_c),
        k_(kernel),
        stride_(stride),
        pad_(pad),
        groups_(groups),
        w_(name + ".w", {out_c, in_c / groups, kernel, kernel}),
        b_(name + ".b", {out_c}) {
    if (in_c % groups != 0 || out_c % groups != 0)
      throw ConfigError(name + ": channels not divisible by groups");
  }

  void init(Rng& rng, double stddev) {
    for (int64_t i = 0; i < w_.value.numel(); ++i)
      w_.value[i] = static_cast<T>(rng.truncated_normal(stddev));
    b_.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    check_input(x);
    const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int64_t ho = conv_out_dim(h, k_, stride_, pad_);
    const int64_t wo = conv_out_dim(w, k_, stride_, pad_);
    if (ho < 1 || wo < 1) throw ConfigError("conv output would be empty");
    in_h_ = h;
    in_w_ = w;
    batch_ = n;
    Tensor<T> y({n, out_c_, ho, wo});

    if (is_pointwise()) {
      // 1x1 stride 1: the input already is the column matrix.
      last_input_ = x;
      ConstMatMap<T> wm(w_.value.data(), out_c_, in_c_);
      const int64_t p = h * w;
      for (int64_t i = 0; i < n; ++i) {
        ConstMatMap<T> xm(x.data() + i * in_c_ * p, in_c_, p);
        MatMap<T> ym(y.data() + i * out_c_ * p, out_c_, p);
        ym.noalias() = wm * xm;
        for (int64_t c = 0; c < out_c_; ++c)
          ym.row(c).array() += b_.value[c];
      }
      return y;
    }

    const int64_t cg = in_c_ / groups_, og = out_c_ / groups_;
    const int64_t kk = cg * k_ * k_, p = ho * wo;
    col_.assign(static_cast<size_t>(n * groups_ * kk * p), T(0));
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t g = 0; g < groups_; ++g) {
        T* col = col_.data() + (i * groups_ + g) * kk * p;
        im2col(x, i, g * cg, cg, ho, wo, col);
        ConstMatMap<T> wm(w_.value.data() + g * og * kk, og, kk);
        ConstMatMap<T> cm(col, kk, p);
        MatMap<T> ym(y.data() + (i * out_c_ + g * og) * p, og, p);
        ym.noalias() = wm * cm;
        for (int64_t c = 0; c < og; ++c)
          ym.row(c).array() += b_.value[g * og + c];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int64_t n = batch_;
    const int64_t ho = dy.dim(2), wo = dy.dim(3);
    const int64_t p = ho * wo;
    Tensor<T> dx({n, in_c_, in_h_, in_w_});

    if (is_pointwise()) {
      ConstMatMap<T> wm(w_.value.data(), out_c_, in_c_);
      MatMap<T> dwm(w_.grad.data(), out_c_, in_c_);
      for (int64_t i = 0; i < n; ++i) {
        ConstMatMap<T> dym(dy.data() + i * out_c_ * p, out_c_, p);
        ConstMatMap<T> xm(last_input_.data() + i * in_c_ * p, in_c_, p);
        MatMap<T> dxm(dx.data() + i * in_c_ * p, in_c_, p);
        dwm.noalias() += dym * xm.transpose();
        dxm.noalias() = wm.transpose() * dym;
        for (int64_t c = 0; c < out_c_; ++c)
          b_.grad[c] += dym.row(c).sum();
      }
      return dx;
    }

    const int64_t cg = in_c_ / groups_, og = out_c_ / groups_;
    const int64_t kk = cg * k_ * k_;
    std::vector<T> dcol(static_cast<size_t>(kk * p));
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t g = 0; g < groups_; ++g) {
        const T* col = col_.data() + (i * groups_ + g) * kk * p;
        ConstMatMap<T> cm(col, kk, p);
        ConstMatMap<T> dym(dy.data() + (i * out_c_ + g * og) * p, og, p);
        MatMap<T> dwm(w_.grad.data() + g * og * kk, og, kk);
        dwm.noalias() += dym * cm.transpose();
        for (int64_t c = 0; c < og; ++c)
          b_.grad[g * og + c] += dym.row(c).sum();
        ConstMatMap<T> wm(w_.value.data() + g * og * kk, og, kk);
        MatMap<T> dcm(dcol.data(), kk, p);
        dcm.noalias() = wm.transpose() * dym;
        col2im(dcol.data(), i, g * cg, cg, ho, wo, dx);
      }
    }
    return dx;
  }

  void visit_params(const ParamVisitor<T>& fn) {
    fn(w_);
    fn(b_);
  }

  Param<T>& weight() { return w_; }
  Param<T>& bias() { return b_; }
  int64_t out_channels() const { return out_c_; }

 private:
  bool is_pointwise() const {
    return k_ == 1 && stride_ == 1 && pad_ == 0 && groups_ == 1;
  }

  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != in_c_)
      throw ArgumentError("conv " + w_.name + ": bad input shape " +
                          shape_string(x));
  }

  void im2col(const Tensor<T>& x, int64_t n, int64_t c0, int64_t cg,
              int64_t ho, int64_t wo, T* col) const {
    for (int64_t ic = 0; ic < cg; ++ic) {
      const T* src = x.data() + ((n * in_c_ + c0 + ic) * in_h_) * in_w_;
      for (int64_t ky = 0; ky < k_; ++ky) {
        for (int64_t kx = 0; kx < k_; ++kx) {
          T* row = col + ((ic * k_ + ky) * k_ + kx) * ho * wo;
          for (int64_t oy = 0; oy < ho; ++oy) {
            const int64_t iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= in_h_) continue;  // row pre-zeroed
            for (int64_t ox = 0; ox < wo; ++ox) {
              const int64_t ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= in_w_) continue;
              row[oy * wo + ox] = src[iy * in_w_ + ix];
            }
          }
        }
      }
    }
  }

  void col2im(const T* col, int64_t n, int64_t c0, int64_t cg, int64_t ho,
              int64_t wo, Tensor<T>& dx) const {
    for (int64_t ic = 0; ic < cg; ++ic) {
      T* dst = dx.data() + ((n * in_c_ + c0 + ic) * in_h_) * in_w_;
      for (int64_t ky = 0; ky < k_; ++ky) {
        for (int64_t kx = 0; kx < k_; ++kx) {
          const T* row = col + ((ic * k_ + ky) * k_ + kx) * ho * wo;
          for (int64_t oy = 0; oy < ho; ++oy) {
            const int64_t iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= in_h_) continue;
            for (int64_t ox = 0; ox < wo; ++ox) {
              const int64_t ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= in_w_) continue;
              dst[iy * in_w_ + ix] += row[oy * wo + ox];
            }
          }
        }
      }
    }
  }

  int64_t in_c_, out_c_, k_, stride_, pad_, groups_;
  int64_t in_h_ = 0, in_w_ = 0, batch_ = 0;
  Param<T> w_, b_;
  std::vector<T> col_;     // cached im2col from last forward
  Tensor<T> last_input_;   // cached only on the pointwise path
};

// LayerNorm across the channel axis at each spatial position (the
// channels-first convention ConvNeXt uses).
template <typename T>
class ChannelLayerNorm {
 public:
  ChannelLayerNorm(std::string name, int64_t channels, double eps = 1e-6)
      : c_(channels),
        eps_(static_cast<T>(eps)),
        gamma_(name + ".gamma", {channels}),
        beta_(name + ".beta", {channels}) {
    gamma_.value.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != c_)
      throw ArgumentError("layernorm " + gamma_.name + ": bad input shape");
    const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int64_t plane = h * w;
    xhat_ = Tensor<T>(x.shape());
    inv_std_ = Tensor<T>({n, h, w});
    Tensor<T> y(x.shape());
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t s = 0; s < plane; ++s) {
        const T* px = x.data() + (i * c_) * plane + s;
        T mean = T(0);
        for (int64_t c = 0; c < c_; ++c) mean += px[c * plane];
        mean /= static_cast<T>(c_);
        T var = T(0);
        for (int64_t c = 0; c < c_; ++c) {
          const T d = px[c * plane] - mean;
          var += d * d;
        }
        var /= static_cast<T>(c_);
        const T inv = T(1) / std::sqrt(var + eps_);
        inv_std_[i * plane + s] = inv;
        for (int64_t c = 0; c < c_; ++c) {
          const T xh = (px[c * plane] - mean) * inv;
          xhat_[(i * c_ + c) * plane + s] = xh;
          y[(i * c_ + c) * plane + s] = gamma_.value[c] * xh + beta_.value[c];
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int64_t n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
    const int64_t plane = h * w;
    Tensor<T> dx(dy.shape());
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t s = 0; s < plane; ++s) {
        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
        for (int64_t c = 0; c < c_; ++c) {
          const int64_t idx = (i * c_ + c) * plane + s;
          const T g = dy[idx];
          const T xh = xhat_[idx];
          gamma_.grad[c] += g * xh;
          beta_.grad[c] += g;
          const T dxh = g * gamma_.value[c];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xh;
        }
        const T inv = inv_std_[i * plane + s];
        const T cn = static_cast<T>(c_);
        for (int64_t c = 0; c < c_; ++c) {
          const int64_t idx = (i * c_ + c) * plane + s;
          const T dxh = dy[idx] * gamma_.value[c];
          dx[idx] =
              inv / cn * (cn * dxh - sum_dxhat - xhat_[idx] * sum_dxhat_xhat);
        }
      }
    }
    return dx;
  }

  void visit_params(const ParamVisitor<T>& fn) {
    fn(gamma_);
    fn(beta_);
  }

 private:
  int64_t c_;
  T eps_;
  Param<T> gamma_, beta_;
  Tensor<T> xhat_;
  Tensor<T> inv_std_;
};

template <typename T>
struct Silu {
  Tensor<T> input;

  Tensor<T> forward(const Tensor<T>& x) {
    input = x;
    Tensor<T> y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-x[i]));
      y[i] = x[i] * s;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape());
    for (int64_t i = 0; i < dy.numel(); ++i) {
      const T x = input[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      dx[i] = dy[i] * s * (T(1) + x * (T(1) - s));
    }
    return dx;
  }
};

template <typename T>
struct Gelu {
  Tensor<T> input;

  static T phi_cdf(T x) {
    return T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  }
  static T phi_pdf(T x) {
    return T(0.39894228040143267794) * std::exp(T(-0.5) * x * x);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    input = x;
    Tensor<T> y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * phi_cdf(x[i]);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape());
    for (int64_t i = 0; i < dy.numel(); ++i) {
      const T x = input[i];
      dx[i] = dy[i] * (phi_cdf(x) + x * phi_pdf(x));
    }
    return dx;
  }
};

template <typename T>
class Linear {
 public:
  Linear(std::string name, int64_t in_dim, int64_t out_dim)
      : in_(in_dim),
        out_(out_dim),
        w_(name + ".w", {out_dim, in_dim}),
        b_(name + ".b", {out_dim}) {}

  void init(Rng& rng, double stddev) {
    for (int64_t i = 0; i < w_.value.numel(); ++i)
      w_.value[i] = static_cast<T>(rng.truncated_normal(stddev));
    b_.value.fill(T(0));
  }

  // x: (N, in) -> (N, out)
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 2 || x.dim(1) != in_)
      throw ArgumentError("linear " + w_.name + ": bad input shape");
    input_ = x;
    const int64_t n = x.dim(0);
    Tensor<T> y({n, out_});
    ConstMatMap<T> xm(x.data(), n, in_);
    ConstMatMap<T> wm(w_.value.data(), out_, in_);
    MatMap<T> ym(y.data(), n, out_);
    ym.noalias() = xm * wm.transpose();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < out_; ++j) y[i * out_ + j] += b_.value[j];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int64_t n = dy.dim(0);
    Tensor<T> dx({n, in_});
    ConstMatMap<T> dym(dy.data(), n, out_);
    ConstMatMap<T> xm(input_.data(), n, in_);
    ConstMatMap<T> wm(w_.value.data(), out_, in_);
    MatMap<T> dwm(w_.grad.data(), out_, in_);
    MatMap<T> dxm(dx.data(), n, in_);
    dwm.noalias() += dym.transpose() * xm;
    dxm.noalias() = dym * wm;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < out_; ++j) b_.grad[j] += dy[i * out_ + j];
    return dx;
  }

  void visit_params(const ParamVisitor<T>& fn) {
    fn(w_);
    fn(b_);
  }

  int64_t in_dim() const { return in_; }
  int64_t out_dim() const { return out_; }

 private:
  int64_t in_, out_;
  Param<T> w_, b_;
  Tensor<T> input_;
};

// Channel-to-space rearrangement: (N, C*r^2, H, W) -> (N, C, H*r, W*r) with
// out(n, c, h*r+dy, w*r+dx) = in(n, c*r^2 + dy*r + dx, h, w). A lossless
// permutation, so backward is the inverse scatter.
template <typename T>
class PixelShuffle {
 public:
  explicit PixelShuffle(int64_t r) : r_(r) {}

  Tensor<T> forward(const Tensor<T>& x) {
    const int64_t r2 = r_ * r_;
    if (x.rank() != 4 || x.dim(1) % r2 != 0)
      throw ConfigError("pixel shuffle: channels not divisible by r^2");
    const int64_t n = x.dim(0), c = x.dim(1) / r2, h = x.dim(2), w = x.dim(3);
    in_shape_ = x.shape();
    Tensor<T> y({n, c, h * r_, w * r_});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t dy = 0; dy < r_; ++dy)
          for (int64_t dx = 0; dx < r_; ++dx)
            for (int64_t hh = 0; hh < h; ++hh)
              for (int64_t ww = 0; ww < w; ++ww)
                y.at(i, cc, hh * r_ + dy, ww * r_ + dx) =
                    x.at(i, cc * r2 + dy * r_ + dx, hh, ww);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int64_t r2 = r_ * r_;
    Tensor<T> dx(in_shape_);
    const int64_t n = in_shape_[0], c = in_shape_[1] / r2, h = in_shape_[2],
                  w = in_shape_[3];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t ddy = 0; ddy < r_; ++ddy)
          for (int64_t ddx = 0; ddx < r_; ++ddx)
            for (int64_t hh = 0; hh < h; ++hh)
              for (int64_t ww = 0; ww < w; ++ww)
                dx.at(i, cc * r2 + ddy * r_ + ddx, hh, ww) =
                    dy.at(i, cc, hh * r_ + ddy, ww * r_ + ddx);
    return dx;
  }

 private:
  int64_t r_;
  std::vector<int64_t> in_shape_;
};

// Depthwise 7x7 -> LayerNorm -> 1x1 expand x4 -> GELU -> 1x1 project, with a
// residual connection around the whole branch.
template <typename T>
class ConvNeXtBlock {
 public:
  ConvNeXtBlock(std::string name, int64_t channels)
      : dw_(name + ".dw", channels, channels, 7, 1, 3, channels),
        ln_(name + ".ln", channels),
        pw1_(name + ".pw1", channels, channels * 4, 1, 1, 0),
        pw2_(name + ".pw2", channels * 4, channels, 1, 1, 0) {}

  void init(Rng& rng, double stddev) {
    dw_.init(rng, stddev);
    pw1_.init(rng, stddev);
    pw2_.init(rng, stddev);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> h = dw_.forward(x);
    h = ln_.forward(h);
    h = pw1_.forward(h);
    h = act_.forward(h);
    h = pw2_.forward(h);
    for (int64_t i = 0; i < h.numel(); ++i) h[i] += x[i];
    return h;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> d = pw2_.backward(dy);
    d = act_.backward(d);
    d = pw1_.backward(d);
    d = ln_.backward(d);
    d = dw_.backward(d);
    for (int64_t i = 0; i < d.numel(); ++i) d[i] += dy[i];
    return d;
  }

  void visit_params(const ParamVisitor<T>& fn) {
    dw_.visit_params(fn);
    ln_.visit_params(fn);
    pw1_.visit_params(fn);
    pw2_.visit_params(fn);
  }

 private:
  Conv2d<T> dw_;
  ChannelLayerNorm<T> ln_;
  Conv2d<T> pw1_;
  Gelu<T> act_;
  Conv2d<T> pw2_;
};

}  // namespace mam4wf::nn
