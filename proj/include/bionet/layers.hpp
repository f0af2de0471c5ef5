#pragma once

#include "bionet/rng.hpp"
#include "bionet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace bionet {

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool trainable = true;

  Parameter(std::string n, Index a, Index b, Index c, Index d)
      : name(std::move(n)), value(a, b, c, d), grad(a, b, c, d) {}
};

template <typename Scalar>
using ParameterList = std::vector<Parameter<Scalar>*>;

inline Index conv_output_size(Index in, Index kernel, Index stride, Index pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Unfolds one C x H x W sample into a (C*k*k) x (OH*OW) row-major matrix.
template <typename Scalar>
void im2col(const Scalar* img, Index channels, Index h, Index w, Index k, Index stride, Index pad, Scalar* col) {
  const Index oh = conv_output_size(h, k, stride, pad);
  const Index ow = conv_output_size(w, k, stride, pad);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = img + c * h * w;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* row = col + ((c * k + ky) * k + kx) * oh * ow;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride - pad + ky;
          Scalar* out = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + ow, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * w;
          if (stride == 1) {
            const Index shift = kx - pad;
            const Index lo = std::max<Index>(0, -shift);
            const Index hi = std::min<Index>(ow, w - shift);
            std::fill(out, out + lo, Scalar(0));
            if (hi > lo) std::copy(src + lo + shift, src + hi + shift, out + lo);
            std::fill(out + std::max(hi, lo), out + ow, Scalar(0));
          } else {
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * stride - pad + kx;
              out[ox] = (ix >= 0 && ix < w) ? src[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-adds columns back into a C x H x W sample.
template <typename Scalar>
void col2im(const Scalar* col, Index channels, Index h, Index w, Index k, Index stride, Index pad, Scalar* img) {
  const Index oh = conv_output_size(h, k, stride, pad);
  const Index ow = conv_output_size(w, k, stride, pad);
  std::fill(img, img + channels * h * w, Scalar(0));
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = img + c * h * w;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* row = col + ((c * k + ky) * k + kx) * oh * ow;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          Scalar* dst = plane + iy * w;
          const Scalar* in = row + oy * ow;
          if (stride == 1) {
            const Index shift = kx - pad;
            const Index lo = std::max<Index>(0, -shift);
            const Index hi = std::min<Index>(ow, w - shift);
            for (Index ox = lo; ox < hi; ++ox) dst[ox + shift] += in[ox];
            continue;
          }
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

/// Base for layers with parameters. forward() caches what backward() needs,
/// so a layer supports exactly one pending backward pass.
template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual void collect(ParameterList<Scalar>& out) { (void)out; }
};

/// 2-D convolution, square kernel, zero padding.
template <typename Scalar>
class Conv2d : public Layer<Scalar> {
 public:
  Conv2d(std::string name, Index in, Index out, Index kernel, Index stride, Index pad)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad),
        weight_(name + ".weight", out, in, kernel, kernel), bias_(name + ".bias", out, 1, 1, 1) {}

  /// He-normal weights, zero bias.
  void initialize(Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_ * k_ * k_));
    for (Index i = 0; i < weight_.value.size(); ++i) weight_.value.values()[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
    bias_.value.set_zero();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    check_input(x);
    input_ = x;
    const Index oh = conv_output_size(x.height(), k_, stride_, pad_);
    const Index ow = conv_output_size(x.width(), k_, stride_, pad_);
    Tensor<Scalar> y(x.batch(), out_, oh, ow);
    const auto w = weight_.value.as_matrix(out_, in_ * k_ * k_);
    const auto b = bias_.value.as_matrix(out_, 1);
    for (Index n = 0; n < x.batch(); ++n) {
      auto ys = y.sample(n);
      if (is_pointwise()) {
        ys.noalias() = w * x.sample(n);
      } else {
        unfold(x, n, oh * ow);
        ys.noalias() = w * col_;
      }
      ys.colwise() += b.col(0);
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    const Tensor<Scalar>& x = input_;
    const Index ohw = dy.plane_size();
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(x);
    const auto w = weight_.value.as_matrix(out_, in_ * k_ * k_);
    auto dw = weight_.grad.as_matrix(out_, in_ * k_ * k_);
    auto db = bias_.grad.as_matrix(out_, 1);
    const bool param_grads = weight_.trainable;
    for (Index n = 0; n < x.batch(); ++n) {
      const auto dys = dy.sample(n);
      if (is_pointwise()) {
        if (param_grads) dw.noalias() += dys * x.sample(n).transpose();
        dx.sample(n).noalias() = w.transpose() * dys;
      } else {
        if (param_grads) {
          unfold(x, n, ohw);
          dw.noalias() += dys * col_.transpose();
        }
        dcol_.resize(in_ * k_ * k_, ohw);
        dcol_.noalias() = w.transpose() * dys;
        col2im(dcol_.data(), in_, x.height(), x.width(), k_, stride_, pad_, dx.sample_data(n));
      }
      if (param_grads) db.col(0) += dys.rowwise().sum();
    }
    return dx;
  }

  void collect(ParameterList<Scalar>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }
  Index in_channels() const { return in_; }
  Index out_channels() const { return out_; }

 private:
  bool is_pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  void check_input(const Tensor<Scalar>& x) const {
    if (x.channels() != in_)
      throw std::invalid_argument("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                                  std::to_string(x.channels()));
  }

  void unfold(const Tensor<Scalar>& x, Index n, Index ohw) {
    col_.resize(in_ * k_ * k_, ohw);
    im2col(x.sample_data(n), in_, x.height(), x.width(), k_, stride_, pad_, col_.data());
  }

  Index in_, out_, k_, stride_, pad_;
  Parameter<Scalar> weight_, bias_;
  Tensor<Scalar> input_;
  typename Tensor<Scalar>::Matrix col_, dcol_;
};

/// 2x2 stride-2 transposed convolution ("up-convolution").
template <typename Scalar>
class UpConv2x2 : public Layer<Scalar> {
 public:
  UpConv2x2(std::string name, Index in, Index out)
      : in_(in), out_(out), weight_(name + ".weight", in, out, 2, 2), bias_(name + ".bias", out, 1, 1, 1) {}

  void initialize(Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_));
    for (Index i = 0; i < weight_.value.size(); ++i) weight_.value.values()[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
    bias_.value.set_zero();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.channels() != in_) throw std::invalid_argument("UpConv2x2: channel mismatch");
    input_ = x;
    const Index h = x.height(), w = x.width();
    Tensor<Scalar> y(x.batch(), out_, 2 * h, 2 * w);
    const auto wm = weight_.value.as_matrix(in_, out_ * 4);
    for (Index n = 0; n < x.batch(); ++n) {
      tmp_.resize(out_ * 4, h * w);
      tmp_.noalias() = wm.transpose() * x.sample(n);
      for (Index co = 0; co < out_; ++co) {
        const Scalar b = bias_.value.values()[co];
        Scalar* dst = y.plane_data(n, co);
        for (Index d = 0; d < 4; ++d) {
          const Index dy = d / 2, dx = d % 2;
          const Scalar* src = tmp_.data() + (co * 4 + d) * h * w;
          for (Index iy = 0; iy < h; ++iy)
            for (Index ix = 0; ix < w; ++ix) dst[(2 * iy + dy) * 2 * w + 2 * ix + dx] = src[iy * w + ix] + b;
        }
      }
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dyt) {
    const Tensor<Scalar>& x = input_;
    const Index h = x.height(), w = x.width();
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(x);
    const auto wm = weight_.value.as_matrix(in_, out_ * 4);
    auto dw = weight_.grad.as_matrix(in_, out_ * 4);
    const bool param_grads = weight_.trainable;
    for (Index n = 0; n < x.batch(); ++n) {
      tmp_.resize(out_ * 4, h * w);
      for (Index co = 0; co < out_; ++co) {
        const Scalar* src = dyt.plane_data(n, co);
        Scalar bsum = 0;
        for (Index d = 0; d < 4; ++d) {
          const Index dy = d / 2, ddx = d % 2;
          Scalar* dst = tmp_.data() + (co * 4 + d) * h * w;
          for (Index iy = 0; iy < h; ++iy)
            for (Index ix = 0; ix < w; ++ix) {
              dst[iy * w + ix] = src[(2 * iy + dy) * 2 * w + 2 * ix + ddx];
            }
        }
        if (param_grads) {
          for (Index i = 0; i < 4 * h * w; ++i) bsum += src[i];
          bias_.grad.values()[co] += bsum;
        }
      }
      if (param_grads) dw.noalias() += x.sample(n) * tmp_.transpose();
      dx.sample(n).noalias() = wm * tmp_;
    }
    return dx;
  }

  void collect(ParameterList<Scalar>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Index in_, out_;
  Parameter<Scalar> weight_, bias_;
  Tensor<Scalar> input_;
  typename Tensor<Scalar>::Matrix tmp_;
};

/// Group normalization with per-channel affine parameters. Statistics are
/// per sample, so batch elements never interact.
template <typename Scalar>
class GroupNorm : public Layer<Scalar> {
 public:
  GroupNorm(std::string name, Index channels, Index groups, Scalar eps = Scalar(1e-5))
      : channels_(channels), groups_(groups), eps_(eps),
        gamma_(name + ".gamma", channels, 1, 1, 1), beta_(name + ".beta", channels, 1, 1, 1) {
    if (groups <= 0 || channels % groups != 0) throw std::invalid_argument("GroupNorm: channels not divisible by groups");
    gamma_.value.values().setOnes();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.channels() != channels_) throw std::invalid_argument("GroupNorm: channel mismatch");
    const Index per_group = channels_ / groups_;
    const Index hw = x.plane_size();
    const Index m = per_group * hw;
    normalized_ = Tensor<Scalar>::zeros_like(x);
    inv_std_.resize(x.batch() * groups_);
    Tensor<Scalar> y = Tensor<Scalar>::zeros_like(x);
    for (Index n = 0; n < x.batch(); ++n) {
      for (Index g = 0; g < groups_; ++g) {
        const Index offset = g * per_group * hw;
        auto src = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(x.sample_data(n) + offset, m);
        const Scalar mean = src.mean();
        const Scalar var = (src - mean).square().mean();
        const Scalar inv = Scalar(1) / std::sqrt(var + eps_);
        inv_std_[n * groups_ + g] = inv;
        auto xhat = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(normalized_.sample_data(n) + offset, m);
        xhat = (src - mean) * inv;
        for (Index c = 0; c < per_group; ++c) {
          const Index ch = g * per_group + c;
          auto out = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(y.plane_data(n, ch), hw);
          out = xhat.segment(c * hw, hw) * gamma_.value.values()[ch] + beta_.value.values()[ch];
        }
      }
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    const Index per_group = channels_ / groups_;
    const Index hw = dy.plane_size();
    const Index m = per_group * hw;
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(dy);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> dxhat(m);
    const bool param_grads = gamma_.trainable;
    for (Index n = 0; n < dy.batch(); ++n) {
      for (Index g = 0; g < groups_; ++g) {
        const Index offset = g * per_group * hw;
        auto xhat = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(normalized_.sample_data(n) + offset, m);
        for (Index c = 0; c < per_group; ++c) {
          const Index ch = g * per_group + c;
          auto d = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(dy.plane_data(n, ch), hw);
          dxhat.segment(c * hw, hw) = d * gamma_.value.values()[ch];
          if (param_grads) {
            gamma_.grad.values()[ch] += (d * xhat.segment(c * hw, hw)).sum();
            beta_.grad.values()[ch] += d.sum();
          }
        }
        const Scalar inv = inv_std_[n * groups_ + g];
        const Scalar sum_d = dxhat.sum();
        const Scalar sum_dx = (dxhat * xhat).sum();
        auto out = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(dx.sample_data(n) + offset, m);
        out = (inv / static_cast<Scalar>(m)) * (static_cast<Scalar>(m) * dxhat - sum_d - xhat * sum_dx);
      }
    }
    return dx;
  }

  void collect(ParameterList<Scalar>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

 private:
  Index channels_, groups_;
  Scalar eps_;
  Parameter<Scalar> gamma_, beta_;
  Tensor<Scalar> normalized_;
  std::vector<Scalar> inv_std_;
};

/// Fully connected layer on N x F x 1 x 1 tensors.
template <typename Scalar>
class Linear : public Layer<Scalar> {
 public:
  Linear(std::string name, Index in, Index out)
      : in_(in), out_(out), weight_(name + ".weight", out, in, 1, 1), bias_(name + ".bias", out, 1, 1, 1) {}

  void initialize(Rng& rng, double gain = 2.0) {
    const double stddev = std::sqrt(gain / static_cast<double>(in_));
    for (Index i = 0; i < weight_.value.size(); ++i) weight_.value.values()[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
    bias_.value.set_zero();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.sample_size() != in_) throw std::invalid_argument("Linear: feature size mismatch");
    input_ = x;
    Tensor<Scalar> y(x.batch(), out_, 1, 1);
    const auto xm = x.as_matrix(x.batch(), in_);
    auto ym = y.as_matrix(x.batch(), out_);
    ym.noalias() = xm * weight_.value.as_matrix(out_, in_).transpose();
    ym.rowwise() += bias_.value.as_matrix(1, out_).row(0);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    const auto dym = dy.as_matrix(dy.batch(), out_);
    if (weight_.trainable) {
      weight_.grad.as_matrix(out_, in_).noalias() += dym.transpose() * input_.as_matrix(input_.batch(), in_);
      bias_.grad.as_matrix(1, out_).row(0) += dym.colwise().sum();
    }
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(input_);
    dx.as_matrix(dx.batch(), in_).noalias() = dym * weight_.value.as_matrix(out_, in_);
    return dx;
  }

  void collect(ParameterList<Scalar>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Parameter<Scalar>& bias() { return bias_; }

 private:
  Index in_, out_;
  Parameter<Scalar> weight_, bias_;
  Tensor<Scalar> input_;
};

template <typename Scalar>
class Relu {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    Tensor<Scalar> y = x;
    y.values() = y.values().max(Scalar(0));
    output_ = y;
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> dx = dy;
    dx.values() = (output_.values() > Scalar(0)).select(dy.values(), Scalar(0));
    return dx;
  }

 private:
  Tensor<Scalar> output_;
};

template <typename Scalar>
class MaxPool2 {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.height() % 2 != 0 || x.width() % 2 != 0) throw std::invalid_argument("MaxPool2: odd spatial size");
    in_h_ = x.height();
    in_w_ = x.width();
    Tensor<Scalar> y(x.batch(), x.channels(), x.height() / 2, x.width() / 2);
    argmax_.assign(static_cast<std::size_t>(y.size()), 0);
    const Index oh = y.height(), ow = y.width();
    for (Index p = 0; p < x.batch() * x.channels(); ++p) {
      const Scalar* src = x.data() + p * in_h_ * in_w_;
      Scalar* dst = y.data() + p * oh * ow;
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
          Index best = (2 * oy) * in_w_ + 2 * ox;
          for (Index d = 1; d < 4; ++d) {
            const Index idx = (2 * oy + d / 2) * in_w_ + 2 * ox + d % 2;
            if (src[idx] > src[best]) best = idx;
          }
          dst[oy * ow + ox] = src[best];
          argmax_[static_cast<std::size_t>(p * oh * ow + oy * ow + ox)] = best;
        }
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> dx(dy.batch(), dy.channels(), in_h_, in_w_);
    const Index ohw = dy.plane_size();
    for (Index p = 0; p < dy.batch() * dy.channels(); ++p)
      for (Index i = 0; i < ohw; ++i)
        dx.data()[p * in_h_ * in_w_ + argmax_[static_cast<std::size_t>(p * ohw + i)]] += dy.data()[p * ohw + i];
    return dx;
  }

 private:
  Index in_h_ = 0, in_w_ = 0;
  std::vector<Index> argmax_;
};

/// Per-pixel softmax over channels.
template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& logits) {
  Tensor<Scalar> out = Tensor<Scalar>::zeros_like(logits);
  for (Index n = 0; n < logits.batch(); ++n) {
    const auto z = logits.sample(n);
    auto p = out.sample(n);
    p = (z.rowwise() - z.colwise().maxCoeff()).array().exp().matrix();
    const auto sums = p.colwise().sum().eval();
    p.array().rowwise() /= sums.array();
  }
  return out;
}

/// Vector-Jacobian product of softmax_channels given its output.
template <typename Scalar>
Tensor<Scalar> softmax_channels_backward(const Tensor<Scalar>& probs, const Tensor<Scalar>& dprobs) {
  Tensor<Scalar> dz = Tensor<Scalar>::zeros_like(probs);
  for (Index n = 0; n < probs.batch(); ++n) {
    const auto p = probs.sample(n).array();
    const auto d = dprobs.sample(n).array();
    const auto dot = (p * d).colwise().sum().eval();
    dz.sample(n).array() = p * (d.rowwise() - dot);
  }
  return dz;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& logits) {
  Tensor<Scalar> out = logits;
  out.values() = Scalar(1) / (Scalar(1) + (-logits.values()).exp());
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& probs, const Tensor<Scalar>& dprobs) {
  Tensor<Scalar> dz = probs;
  dz.values() = dprobs.values() * probs.values() * (Scalar(1) - probs.values());
  return dz;
}

}  // namespace bionet
