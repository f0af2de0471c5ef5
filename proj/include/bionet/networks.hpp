#pragma once

#include "bionet/layers.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

namespace bionet {

enum class OutputHead { softmax, sigmoid, none };

struct NetworkConfig {
  Index in_channels = 1;
  Index out_channels = 12;
  Index base_width = 64;
  Index depth = 4;
  Index bio_head_width = 64;
  /// Groups for group normalization after each convolution; 0 disables it.
  Index norm_groups = 8;
  OutputHead head = OutputHead::softmax;
  std::uint64_t seed = 0;

  /// Spatial sizes must be multiples of this.
  Index size_multiple() const { return Index(1) << depth; }
  void validate() const;
};

std::string to_string(OutputHead head);
OutputHead output_head_from_string(const std::string& s);

/// FNV-1a 64-bit digest over parameter names, shapes and raw value bytes.
template <typename Scalar>
std::uint64_t parameter_digest(const ParameterList<Scalar>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto* prm : params) {
    mix(prm->name.data(), prm->name.size());
    const Index dims[4] = {prm->value.batch(), prm->value.channels(), prm->value.height(), prm->value.width()};
    mix(dims, sizeof dims);
    mix(prm->value.data(), sizeof(Scalar) * static_cast<std::size_t>(prm->value.size()));
  }
  return h;
}

/// Common parameter bookkeeping: enumeration, gradient reset, freezing.
template <typename Scalar>
class Network {
 public:
  virtual ~Network() = default;

  ParameterList<Scalar> parameters() {
    ParameterList<Scalar> out;
    for (auto* layer : layers_) layer->collect(out);
    return out;
  }

  Index parameter_count() {
    Index total = 0;
    for (auto* p : parameters()) total += p->value.size();
    return total;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.set_zero();
  }

  /// Marks every parameter non-trainable and records the digest.
  void freeze() {
    for (auto* p : parameters()) p->trainable = false;
    frozen_digest_ = digest();
    frozen_ = true;
  }
  bool is_frozen() const { return frozen_; }
  std::uint64_t frozen_digest() const { return frozen_digest_; }
  std::uint64_t digest() { return parameter_digest(parameters()); }

  const NetworkConfig& config() const { return config_; }

  /// Restores freeze state from a checkpoint; the digest is recomputed.
  void set_frozen(bool frozen) {
    if (frozen) {
      freeze();
    } else {
      for (auto* p : parameters()) p->trainable = true;
      frozen_ = false;
      frozen_digest_ = 0;
    }
  }

 protected:
  explicit Network(NetworkConfig config) : config_(config) {}
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  void register_layer(Layer<Scalar>* layer) { layers_.push_back(layer); }

  NetworkConfig config_;

 private:
  std::vector<Layer<Scalar>*> layers_;
  bool frozen_ = false;
  std::uint64_t frozen_digest_ = 0;
};

/// conv3x3 -> [group norm] -> ReLU, twice.
template <typename Scalar>
class DoubleConv {
 public:
  DoubleConv(const std::string& name, Index in, Index out, Index groups)
      : conv1_(name + ".conv1", in, out, 3, 1, 1), conv2_(name + ".conv2", out, out, 3, 1, 1) {
    if (groups > 0) {
      norm1_ = std::make_unique<GroupNorm<Scalar>>(name + ".norm1", out, std::min(groups, out));
      norm2_ = std::make_unique<GroupNorm<Scalar>>(name + ".norm2", out, std::min(groups, out));
    }
  }

  void initialize(Rng& rng) {
    conv1_.initialize(rng);
    conv2_.initialize(rng);
  }

  void register_with(std::vector<Layer<Scalar>*>& out) {
    out.push_back(&conv1_);
    if (norm1_) out.push_back(norm1_.get());
    out.push_back(&conv2_);
    if (norm2_) out.push_back(norm2_.get());
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    Tensor<Scalar> h = conv1_.forward(x);
    if (norm1_) h = norm1_->forward(h);
    h = relu1_.forward(h);
    h = conv2_.forward(h);
    if (norm2_) h = norm2_->forward(h);
    return relu2_.forward(h);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> d = relu2_.backward(dy);
    if (norm2_) d = norm2_->backward(d);
    d = conv2_.backward(d);
    d = relu1_.backward(d);
    if (norm1_) d = norm1_->backward(d);
    return conv1_.backward(d);
  }

 private:
  Conv2d<Scalar> conv1_, conv2_;
  std::unique_ptr<GroupNorm<Scalar>> norm1_, norm2_;
  Relu<Scalar> relu1_, relu2_;
};

/// Encoder-decoder segmenter with skip connections. forward() returns
/// logits; apply_head() maps them to probabilities per config().head.
template <typename Scalar>
class UNet : public Network<Scalar> {
 public:
  explicit UNet(const NetworkConfig& config) : Network<Scalar>(config) {
    config.validate();
    const Index w = config.base_width;
    const Index g = config.norm_groups;
    Index ch = w;
    down_.push_back(std::make_unique<DoubleConv<Scalar>>("enc0", config.in_channels, w, g));
    for (Index level = 1; level <= config.depth; ++level) {
      down_.push_back(std::make_unique<DoubleConv<Scalar>>("enc" + std::to_string(level), ch, ch * 2, g));
      ch *= 2;
    }
    pools_.resize(static_cast<std::size_t>(config.depth));
    for (Index level = config.depth - 1; level >= 0; --level) {
      const std::string tag = std::to_string(level);
      ups_.push_back(std::make_unique<UpConv2x2<Scalar>>("up" + tag, ch, ch / 2));
      up_blocks_.push_back(std::make_unique<DoubleConv<Scalar>>("dec" + tag, ch, ch / 2, g));
      ch /= 2;
    }
    final_ = std::make_unique<Conv2d<Scalar>>("final", ch, config.out_channels, 1, 1, 0);

    std::vector<Layer<Scalar>*> layers;
    for (auto& b : down_) b->register_with(layers);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      layers.push_back(ups_[i].get());
      up_blocks_[i]->register_with(layers);
    }
    layers.push_back(final_.get());
    for (auto* l : layers) this->register_layer(l);

    Rng rng(Rng::derive(config.seed, 0x756e6574));
    for (auto& b : down_) b->initialize(rng);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      ups_[i]->initialize(rng);
      up_blocks_[i]->initialize(rng);
    }
    final_->initialize(rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    const Index m = this->config_.size_multiple();
    if (x.height() % m != 0 || x.width() % m != 0)
      throw std::invalid_argument("UNet: spatial size " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                                  " not divisible by " + std::to_string(m));
    if (x.channels() != this->config_.in_channels)
      throw std::invalid_argument("UNet: expected " + std::to_string(this->config_.in_channels) +
                                  " input channels, got " + std::to_string(x.channels()));
    skips_.clear();
    Tensor<Scalar> h = down_[0]->forward(x);
    for (std::size_t level = 0; level < pools_.size(); ++level) {
      skips_.push_back(h);
      h = down_[level + 1]->forward(pools_[level].forward(h));
    }
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      const Tensor<Scalar>& skip = skips_[skips_.size() - 1 - i];
      h = up_blocks_[i]->forward(concat_channels(skip, ups_[i]->forward(h)));
    }
    skips_.clear();
    return final_->forward(h);
  }

  /// Back-propagates a gradient w.r.t. the logits; returns the input gradient.
  Tensor<Scalar> backward(const Tensor<Scalar>& dlogits) {
    Tensor<Scalar> d = final_->backward(dlogits);
    std::vector<Tensor<Scalar>> dskips(ups_.size());
    for (std::size_t i = ups_.size(); i-- > 0;) {
      Tensor<Scalar> dcat = up_blocks_[i]->backward(d);
      const Index skip_ch = dcat.channels() / 2;
      dskips[i] = slice_channels(dcat, 0, skip_ch);
      d = ups_[i]->backward(slice_channels(dcat, skip_ch, dcat.channels() - skip_ch));
    }
    for (std::size_t level = pools_.size(); level-- > 0;) {
      d = pools_[level].backward(down_[level + 1]->backward(d));
      d.values() += dskips[pools_.size() - 1 - level].values();
    }
    return down_[0]->backward(d);
  }

  Tensor<Scalar> apply_head(const Tensor<Scalar>& logits) const {
    switch (this->config_.head) {
      case OutputHead::softmax: return softmax_channels(logits);
      case OutputHead::sigmoid: return sigmoid(logits);
      case OutputHead::none: break;
    }
    return logits;
  }

  Tensor<Scalar> head_backward(const Tensor<Scalar>& probs, const Tensor<Scalar>& dprobs) const {
    switch (this->config_.head) {
      case OutputHead::softmax: return softmax_channels_backward(probs, dprobs);
      case OutputHead::sigmoid: return sigmoid_backward(probs, dprobs);
      case OutputHead::none: break;
    }
    return dprobs;
  }

  Tensor<Scalar> predict(const Tensor<Scalar>& x) { return apply_head(forward(x)); }

 private:
  std::vector<std::unique_ptr<DoubleConv<Scalar>>> down_;
  std::vector<MaxPool2<Scalar>> pools_;
  std::vector<std::unique_ptr<UpConv2x2<Scalar>>> ups_;
  std::vector<std::unique_ptr<DoubleConv<Scalar>>> up_blocks_;
  std::unique_ptr<Conv2d<Scalar>> final_;
  std::vector<Tensor<Scalar>> skips_;
};

/// Thickness regressor: four stride-2 conv blocks, global average pooling,
/// two-layer head. The head output z is mapped to height * softplus(z), so
/// the network predicts thickness as a non-negative fraction of the input
/// height and reports it in pixels.
template <typename Scalar>
class BioRegressor : public Network<Scalar> {
 public:
  static constexpr Index kTrunkBlocks = 4;

  explicit BioRegressor(const NetworkConfig& config) : Network<Scalar>(config) {
    if (config.in_channels != 1) throw std::invalid_argument("BioRegressor: in_channels must be 1");
    config.validate();
    Index in = 1, out = config.base_width;
    for (Index b = 0; b < kTrunkBlocks; ++b) {
      trunk_.push_back(std::make_unique<Conv2d<Scalar>>("trunk" + std::to_string(b), in, out, 3, 2, 1));
      in = out;
      out *= 2;
    }
    relus_.resize(kTrunkBlocks);
    fc1_ = std::make_unique<Linear<Scalar>>("head.fc1", in, config.bio_head_width);
    fc2_ = std::make_unique<Linear<Scalar>>("head.fc2", config.bio_head_width, 1);
    for (auto& c : trunk_) this->register_layer(c.get());
    this->register_layer(fc1_.get());
    this->register_layer(fc2_.get());

    Rng rng(Rng::derive(config.seed, 0x62696f));
    for (auto& c : trunk_) c->initialize(rng);
    fc1_->initialize(rng);
    fc2_->initialize(rng, 1.0);
    // Start near a quarter of the image height.
    fc2_->bias().value.values()[0] = static_cast<Scalar>(std::log(std::expm1(0.25)));
  }

  /// N x 1 x H x W -> N predicted thickness values in pixels.
  Eigen::Array<Scalar, Eigen::Dynamic, 1> forward(const Tensor<Scalar>& x) {
    if (x.channels() != 1) throw std::invalid_argument("BioRegressor: expected 1 input channel");
    if (x.height() < 16 || x.width() < 16) throw std::invalid_argument("BioRegressor: input smaller than 16x16");
    height_ = static_cast<Scalar>(x.height());
    Tensor<Scalar> h = x;
    for (Index b = 0; b < kTrunkBlocks; ++b) h = relus_[b].forward(trunk_[b]->forward(h));
    pooled_shape_ = {h.batch(), h.channels(), h.height(), h.width()};
    Tensor<Scalar> pooled(h.batch(), h.channels(), 1, 1);
    for (Index n = 0; n < h.batch(); ++n) pooled.sample(n).col(0) = h.sample(n).rowwise().mean();
    Tensor<Scalar> z = fc2_->forward(head_relu_.forward(fc1_->forward(pooled)));
    z_ = z.values();
    Eigen::Array<Scalar, Eigen::Dynamic, 1> out(z_.size());
    for (Index i = 0; i < z_.size(); ++i) out[i] = height_ * softplus(z_[i]);
    return out;
  }

  /// Gradient w.r.t. the predictions -> gradient w.r.t. the input.
  Tensor<Scalar> backward(const Eigen::Array<Scalar, Eigen::Dynamic, 1>& dout) {
    Tensor<Scalar> dz(dout.size(), 1, 1, 1);
    for (Index i = 0; i < dout.size(); ++i) dz.values()[i] = dout[i] * height_ * logistic(z_[i]);
    Tensor<Scalar> dpooled = fc1_->backward(head_relu_.backward(fc2_->backward(dz)));
    const auto [n, c, h, w] = pooled_shape_;
    Tensor<Scalar> d(n, c, h, w);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(h * w);
    for (Index i = 0; i < n; ++i) d.sample(i).colwise() = dpooled.sample(i).col(0) * inv;
    for (Index b = kTrunkBlocks; b-- > 0;) d = trunk_[b]->backward(relus_[b].backward(d));
    return d;
  }

 private:
  static Scalar softplus(Scalar z) { return z > Scalar(20) ? z : std::log1p(std::exp(z)); }
  static Scalar logistic(Scalar z) { return Scalar(1) / (Scalar(1) + std::exp(-z)); }

  std::vector<std::unique_ptr<Conv2d<Scalar>>> trunk_;
  std::vector<Relu<Scalar>> relus_;
  std::unique_ptr<Linear<Scalar>> fc1_, fc2_;
  Relu<Scalar> head_relu_;
  Scalar height_ = 0;
  std::array<Index, 4> pooled_shape_{};
  Eigen::Array<Scalar, Eigen::Dynamic, 1> z_;
};

/// G_pred and C_pred for a batch.
template <typename Scalar>
struct CascadeOutput {
  Tensor<Scalar> global_probs;
  Tensor<Scalar> choroid_prob;
};

/// Global-to-local cascade: G = U_G(I), C = U_C(concat(I, G)). Keeps the
/// intermediate tensors of the last forward() for backward().
template <typename Scalar>
class Cascade {
 public:
  Cascade(UNet<Scalar>& global, UNet<Scalar>& local) : global_(global), local_(local) {
    if (global.config().head != OutputHead::softmax) throw std::invalid_argument("Cascade: U_G needs a softmax head");
    if (local.config().head != OutputHead::sigmoid || local.config().out_channels != 1)
      throw std::invalid_argument("Cascade: U_C needs a single sigmoid output");
    if (local.config().in_channels != global.config().in_channels + global.config().out_channels)
      throw std::invalid_argument("Cascade: U_C expects " + std::to_string(local.config().in_channels) +
                                  " channels but image + global output gives " +
                                  std::to_string(global.config().in_channels + global.config().out_channels));
  }

  CascadeOutput<Scalar> forward(const Tensor<Scalar>& image) {
    CascadeOutput<Scalar> out;
    out.global_probs = global_.predict(image);
    image_channels_ = image.channels();
    out.choroid_prob = local_.predict(concat_channels(image, out.global_probs));
    probs_ = out;
    return out;
  }

  /// Gradients are w.r.t. the *logits* of each stage; the local stage's
  /// input gradient flows back into U_G through the concatenation and the
  /// softmax. Returns the gradient w.r.t. the image.
  Tensor<Scalar> backward(const Tensor<Scalar>& dglobal_logits, const Tensor<Scalar>& dlocal_logits) {
    Tensor<Scalar> dcat = local_.backward(dlocal_logits);
    Tensor<Scalar> dimage = slice_channels(dcat, 0, image_channels_);
    Tensor<Scalar> dglobal_probs = slice_channels(dcat, image_channels_, dcat.channels() - image_channels_);
    Tensor<Scalar> dz = softmax_channels_backward(probs_.global_probs, dglobal_probs);
    if (!dglobal_logits.empty()) dz.values() += dglobal_logits.values();
    dimage.values() += global_.backward(dz).values();
    return dimage;
  }

  const CascadeOutput<Scalar>& last_output() const { return probs_; }

 private:
  UNet<Scalar>& global_;
  UNet<Scalar>& local_;
  Index image_channels_ = 1;
  CascadeOutput<Scalar> probs_;
};

template <typename Scalar>
CascadeOutput<Scalar> cascade_forward(const Tensor<Scalar>& image, UNet<Scalar>& global, UNet<Scalar>& local) {
  return Cascade<Scalar>(global, local).forward(image);
}

/// Convenience constructors matching the cascade roles.
NetworkConfig global_config(Index base_width, Index depth, Index num_classes, std::uint64_t seed);
NetworkConfig local_config(Index base_width, Index depth, Index in_channels, std::uint64_t seed);
NetworkConfig bio_config(Index base_width, Index head_width, std::uint64_t seed);

}  // namespace bionet
