#pragma once

#include "bionet/domain.hpp"
#include "bionet/networks.hpp"
#include "bionet/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace bionet {

inline constexpr double kProbabilityClamp = 1e-7;

struct LossWeights {
  double w_multilayers = 1.0;
  double w_choroid = 1.0;
  double w_bio = 0.01;

  void validate() const {
    if (!(w_multilayers >= 0.0 && w_choroid >= 0.0 && w_bio >= 0.0))
      throw std::invalid_argument("LossWeights: all weights must be >= 0");
  }
};

/// Loss value plus its gradient w.r.t. the prediction it was given.
template <typename Scalar, typename Grad>
struct LossResult {
  Scalar value = 0;
  Grad grad;
};

template <typename Scalar>
using Vector = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Class ids for a batch, pixel order (n, y, x) matching Tensor layout.
using LabelBatch = Eigen::Array<int, Eigen::Dynamic, 1>;

LabelBatch label_batch(const std::vector<const LayerLabelMap*>& maps);

/// Binary masks as an N x 1 x H x W tensor of {0, 1}.
template <typename Scalar>
Tensor<Scalar> mask_batch(const std::vector<const ChoroidMask*>& masks) {
  if (masks.empty()) throw std::invalid_argument("mask_batch: empty batch");
  const Index h = masks.front()->height(), w = masks.front()->width();
  Tensor<Scalar> t(static_cast<Index>(masks.size()), 1, h, w);
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n]->height() != h || masks[n]->width() != w) throw std::invalid_argument("mask_batch: size mismatch");
    t.plane(static_cast<Index>(n), 0) = masks[n]->mask.template cast<Scalar>().matrix();
  }
  return t;
}

namespace detail {

template <typename Scalar>
void check_finite(const Vector<Scalar>& v, const char* what) {
  if (!v.isFinite().all()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

template <typename Scalar>
Scalar clamp_prob(Scalar p) {
  const Scalar eps = static_cast<Scalar>(kProbabilityClamp);
  return std::min(std::max(p, eps), Scalar(1) - eps);
}

template <typename Scalar>
bool inside_clamp(Scalar p) {
  const Scalar eps = static_cast<Scalar>(kProbabilityClamp);
  return p > eps && p < Scalar(1) - eps;
}

}  // namespace detail

/// Mean absolute error between predicted and target thickness. The
/// subgradient at equality is 0.
template <typename Scalar>
LossResult<Scalar, Vector<Scalar>> bio_mae_loss(const Vector<Scalar>& pred, const Vector<Scalar>& target) {
  if (pred.size() != target.size())
    throw std::invalid_argument("bio_mae_loss: batch size mismatch (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(target.size()) + ")");
  if (pred.size() == 0) throw std::invalid_argument("bio_mae_loss: empty batch");
  detail::check_finite(pred, "bio_mae_loss");
  detail::check_finite(target, "bio_mae_loss");
  const Scalar n = static_cast<Scalar>(pred.size());
  const Vector<Scalar> diff = pred - target;
  LossResult<Scalar, Vector<Scalar>> r;
  r.value = diff.abs().sum() / n;
  r.grad = diff.sign() / n;
  return r;
}

enum class CrossEntropyForm {
  /// Per-pixel categorical cross entropy over the normalized class axis.
  categorical,
  /// Sum over channels of per-channel binary cross entropy.
  per_channel_binary,
};

std::string to_string(CrossEntropyForm form);
CrossEntropyForm cross_entropy_form_from_string(const std::string& s);

/// Cross entropy of an N x L x H x W probability tensor against class ids,
/// averaged over all N*H*W pixels, probabilities clamped to [eps, 1 - eps].
template <typename Scalar>
LossResult<Scalar, Tensor<Scalar>> multilayer_ce_loss(const Tensor<Scalar>& probs, const LabelBatch& labels,
                                                      CrossEntropyForm form = CrossEntropyForm::categorical) {
  const Index pixels = probs.batch() * probs.plane_size();
  if (labels.size() != pixels)
    throw std::invalid_argument("multilayer_ce_loss: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(pixels) + " pixels");
  if (labels.size() > 0 && (labels.minCoeff() < 0 || labels.maxCoeff() >= probs.channels()))
    throw std::invalid_argument("multilayer_ce_loss: label id out of range for " + std::to_string(probs.channels()) +
                                " classes");
  const Index hw = probs.plane_size();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(pixels);
  LossResult<Scalar, Tensor<Scalar>> r;
  r.grad = Tensor<Scalar>::zeros_like(probs);
  double total = 0.0;
  for (Index n = 0; n < probs.batch(); ++n) {
    for (Index i = 0; i < hw; ++i) {
      const int t = labels[n * hw + i];
      if (form == CrossEntropyForm::categorical) {
        const Scalar p = probs.sample_data(n)[t * hw + i];
        total -= std::log(static_cast<double>(detail::clamp_prob(p)));
        if (detail::inside_clamp(p)) r.grad.sample_data(n)[t * hw + i] = -inv / p;
      } else {
        for (Index c = 0; c < probs.channels(); ++c) {
          const Scalar p = probs.sample_data(n)[c * hw + i];
          const Scalar pc = detail::clamp_prob(p);
          const bool on = (c == t);
          total -= std::log(static_cast<double>(on ? pc : Scalar(1) - pc));
          if (detail::inside_clamp(p)) r.grad.sample_data(n)[c * hw + i] = on ? -inv / p : inv / (Scalar(1) - p);
        }
      }
    }
  }
  r.value = static_cast<Scalar>(total / static_cast<double>(pixels));
  return r;
}

/// Single-sample convenience overload.
template <typename Scalar>
LossResult<Scalar, Tensor<Scalar>> multilayer_ce_loss(const Tensor<Scalar>& probs, const LayerLabelMap& gt,
                                                      CrossEntropyForm form = CrossEntropyForm::categorical) {
  if (probs.batch() != 1 || probs.height() != gt.height() || probs.width() != gt.width())
    throw std::invalid_argument("multilayer_ce_loss: shape mismatch");
  if (probs.channels() != gt.num_classes)
    throw std::invalid_argument("multilayer_ce_loss: " + std::to_string(probs.channels()) + " channels for " +
                                std::to_string(gt.num_classes) + " classes");
  return multilayer_ce_loss(probs, label_batch({&gt}), form);
}

/// Binary cross entropy of an N x 1 x H x W probability map against a
/// {0, 1} target tensor of the same shape, averaged over pixels.
template <typename Scalar>
LossResult<Scalar, Tensor<Scalar>> choroid_bce_loss(const Tensor<Scalar>& prob, const Tensor<Scalar>& target) {
  if (!prob.same_shape(target) || prob.channels() != 1)
    throw std::invalid_argument("choroid_bce_loss: shape mismatch " + prob.shape_string() + " vs " +
                                target.shape_string());
  if ((prob.values() < Scalar(0)).any() || (prob.values() > Scalar(1)).any() || !prob.values().isFinite().all())
    throw std::invalid_argument("choroid_bce_loss: probabilities must be in [0, 1]");
  const Index m = prob.size();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(m);
  LossResult<Scalar, Tensor<Scalar>> r;
  r.grad = Tensor<Scalar>::zeros_like(prob);
  double total = 0.0;
  for (Index i = 0; i < m; ++i) {
    const Scalar p = prob.values()[i];
    const Scalar g = target.values()[i];
    const Scalar pc = detail::clamp_prob(p);
    total -= static_cast<double>(g) * std::log(static_cast<double>(pc)) +
             static_cast<double>(1 - g) * std::log(static_cast<double>(1 - pc));
    if (detail::inside_clamp(p)) r.grad.values()[i] = -inv * (g / p - (Scalar(1) - g) / (Scalar(1) - p));
  }
  r.value = static_cast<Scalar>(total / static_cast<double>(m));
  return r;
}

template <typename Scalar>
LossResult<Scalar, Tensor<Scalar>> choroid_bce_loss(const Tensor<Scalar>& prob, const ChoroidMask& gt) {
  return choroid_bce_loss(prob, mask_batch<Scalar>({&gt}));
}

/// |B(C_pred) - target| averaged over the batch. The regressor must be
/// frozen; only the returned input gradient is produced, its parameters
/// receive nothing.
template <typename Scalar>
LossResult<Scalar, Tensor<Scalar>> bio_regularizer_loss(const Tensor<Scalar>& pred_choroid_prob,
                                                        const Vector<Scalar>& target_thickness,
                                                        BioRegressor<Scalar>& frozen_bio) {
  if (!frozen_bio.is_frozen()) throw std::invalid_argument("bio_regularizer_loss: biomarker network is not frozen");
  if (pred_choroid_prob.channels() != 1) throw std::invalid_argument("bio_regularizer_loss: expected 1 channel");
  const Vector<Scalar> pred = frozen_bio.forward(pred_choroid_prob);
  const auto mae = bio_mae_loss<Scalar>(pred, target_thickness);
  LossResult<Scalar, Tensor<Scalar>> r;
  r.value = mae.value;
  r.grad = frozen_bio.backward(mae.grad);
  return r;
}

/// Weighted sum of the three loss components.
inline double total_loss(double l_multilayers, double l_choroid, double l_bio, const LossWeights& w) {
  return w.w_multilayers * l_multilayers + w.w_choroid * l_choroid + w.w_bio * l_bio;
}

/// Gradient of categorical cross entropy w.r.t. the softmax *logits*:
/// (p - onehot) / pixels. This is the unclamped loss's exact gradient and
/// does not vanish when a wrong class saturates.
template <typename Scalar>
Tensor<Scalar> softmax_ce_logit_grad(const Tensor<Scalar>& probs, const LabelBatch& labels) {
  const Index hw = probs.plane_size();
  const Index pixels = probs.batch() * hw;
  if (labels.size() != pixels) throw std::invalid_argument("softmax_ce_logit_grad: label count mismatch");
  const Scalar inv = Scalar(1) / static_cast<Scalar>(pixels);
  Tensor<Scalar> g = probs;
  for (Index n = 0; n < probs.batch(); ++n)
    for (Index i = 0; i < hw; ++i) g.sample_data(n)[labels[n * hw + i] * hw + i] -= Scalar(1);
  g.values() *= inv;
  return g;
}

/// Gradient of binary cross entropy w.r.t. the sigmoid logits: (p - g) / pixels.
template <typename Scalar>
Tensor<Scalar> sigmoid_bce_logit_grad(const Tensor<Scalar>& prob, const Tensor<Scalar>& target) {
  if (!prob.same_shape(target)) throw std::invalid_argument("sigmoid_bce_logit_grad: shape mismatch");
  Tensor<Scalar> g = prob;
  g.values() = (prob.values() - target.values()) / static_cast<Scalar>(prob.size());
  return g;
}

}  // namespace bionet
