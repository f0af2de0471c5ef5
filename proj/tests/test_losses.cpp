#include "bionet/losses.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <numbers>

using namespace bionet;

namespace {

Tensor<double> random_probs(Rng& rng, Index n, Index classes, Index h, Index w) {
  Tensor<double> logits(n, classes, h, w);
  for (Index i = 0; i < logits.size(); ++i) logits.values()[i] = rng.normal();
  return softmax_channels(logits);
}

LabelBatch random_labels(Rng& rng, Index count, Index classes) {
  LabelBatch l(count);
  for (Index i = 0; i < count; ++i) l[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return l;
}

Tensor<double> random_mask_tensor(Rng& rng, Index n, Index h, Index w) {
  Tensor<double> t(n, 1, h, w);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST_CASE("bio_mae_loss examples") {
  Vector<double> a(2), b(2);
  a << 3, 5;
  b << 1, 9;
  CHECK(bio_mae_loss<double>(a, b).value == 3.0);
  CHECK(bio_mae_loss<double>(a, a).value == 0.0);
  Vector<double> p(1), t(1);
  p << 7.5;
  t << 7.0;
  CHECK(bio_mae_loss<double>(p, t).value == 0.5);
  CHECK(bio_mae_loss<double>(a, a).grad.isZero());
  CHECK_THROWS_AS(bio_mae_loss<double>(a, p), std::invalid_argument);
  Vector<double> bad(2);
  bad << 1, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bio_mae_loss<double>(bad, a), std::invalid_argument);
}

TEST_CASE("multilayer_ce_loss closed forms") {
  Rng rng(1);
  Tensor<double> uniform(2, 12, 4, 4);
  uniform.values().setConstant(1.0 / 12.0);
  const auto labels = random_labels(rng, 32, 12);
  CHECK(std::abs(multilayer_ce_loss(uniform, labels).value - std::log(12.0)) <= 1e-6);

  Tensor<double> half(1, 2, 1, 1);
  half.values() << 0.5, 0.5;
  LabelBatch one(1);
  one << 1;
  CHECK(std::abs(multilayer_ce_loss(half, one).value - std::numbers::ln2) <= 1e-6);

  Tensor<double> onehot(1, 12, 4, 4);
  for (Index i = 0; i < 16; ++i) onehot.sample_data(0)[labels[i] * 16 + i] = 1.0;
  LabelBatch first = labels.head(16);
  CHECK(multilayer_ce_loss(onehot, first).value <= 1e-5);
  CHECK(multilayer_ce_loss(onehot, first).value >= 0.0);

  LayerLabelMap gt{LabelGrid::Zero(4, 4), 12};
  CHECK_THROWS_AS(multilayer_ce_loss(Tensor<double>(1, 11, 4, 4), gt), std::invalid_argument);
  LabelBatch out_of_range(16);
  out_of_range.setConstant(12);
  CHECK_THROWS_AS(multilayer_ce_loss(onehot, out_of_range), std::invalid_argument);
}

TEST_CASE("one-hot ground truth minimizes the cross entropy") {
  Rng rng(4);
  const auto labels = random_labels(rng, 16, 12);
  Tensor<double> onehot(1, 12, 4, 4);
  for (Index i = 0; i < 16; ++i) onehot.sample_data(0)[labels[i] * 16 + i] = 1.0;
  const double best = multilayer_ce_loss(onehot, labels).value;
  for (int t = 0; t < 50; ++t) {
    Tensor<double> p = onehot;
    const Index pix = static_cast<Index>(rng.below(16));
    const double eps = rng.uniform(0.01, 0.5);
    const Index other = (labels[pix] + 1 + static_cast<Index>(rng.below(11))) % 12;
    p.sample_data(0)[labels[pix] * 16 + pix] -= eps;
    p.sample_data(0)[other * 16 + pix] += eps;
    CHECK(multilayer_ce_loss(p, labels).value > best);
  }
}

TEST_CASE("choroid_bce_loss closed forms") {
  Rng rng(2);
  Tensor<double> half(1, 1, 4, 4);
  half.values().setConstant(0.5);
  CHECK(std::abs(choroid_bce_loss(half, random_mask_tensor(rng, 1, 4, 4)).value - std::numbers::ln2) <= 1e-6);

  Tensor<double> p(1, 1, 1, 1), g(1, 1, 1, 1);
  p.values() << 0.25;
  g.values() << 1.0;
  CHECK(std::abs(choroid_bce_loss(p, g).value - std::log(4.0)) <= 1e-6);

  const auto m = random_mask_tensor(rng, 1, 4, 4);
  CHECK(choroid_bce_loss(m, m).value <= 1e-5);

  ChoroidMask gt = ChoroidMask::zeros(4, 4);
  CHECK_THROWS_AS(choroid_bce_loss(Tensor<double>(1, 1, 4, 5), gt), std::invalid_argument);
  Tensor<double> out_of_range(1, 1, 4, 4);
  out_of_range.values().setConstant(1.5);
  CHECK_THROWS_AS(choroid_bce_loss(out_of_range, gt), std::invalid_argument);
}

TEST_CASE("total_loss is the weighted sum") {
  CHECK(total_loss(2, 3, 10, LossWeights{}) == doctest::Approx(5.1).epsilon(1e-15));
  CHECK(total_loss(2, 3, 10, LossWeights{}) == 2.0 + 3.0 + 0.01 * 10.0);
  CHECK(total_loss(0, 0, 0, LossWeights{}) == 0.0);
  CHECK(total_loss(1, 1, 7, LossWeights{0, 0, 1}) == 7.0);
  const LossWeights w{1.5, 0.25, 0.01};
  const LossWeights w2{3.0, 0.25, 0.01};
  CHECK(total_loss(2, 3, 10, w2) - total_loss(2, 3, 10, w) == doctest::Approx(1.5 * 2).epsilon(1e-14));
  CHECK_THROWS_AS((LossWeights{-1, 1, 1}.validate()), std::invalid_argument);
}

TEST_CASE("gradient check: bio_mae_loss") {
  Rng rng(10);
  Vector<double> pred(16), target(16);
  for (Index i = 0; i < 16; ++i) {
    target[i] = rng.uniform(10, 40);
    const double off = rng.uniform(0.05, 3.0) * (rng.bernoulli(0.5) ? 1 : -1);
    pred[i] = target[i] + off;
  }
  const auto analytic = bio_mae_loss<double>(pred, target).grad;
  Vector<double> numeric(16);
  for (Index i = 0; i < 16; ++i) {
    Vector<double> p = pred, m = pred;
    p[i] += 1e-4;
    m[i] -= 1e-4;
    numeric[i] = (bio_mae_loss<double>(p, target).value - bio_mae_loss<double>(m, target).value) / 2e-4;
  }
  CHECK(oracle::max_relative_error(analytic, numeric) <= 1e-3);
}

TEST_CASE("gradient check: multilayer_ce_loss (both forms)") {
  Rng rng(11);
  const auto probs = random_probs(rng, 2, 12, 4, 4);
  const auto labels = random_labels(rng, 32, 12);
  for (auto form : {CrossEntropyForm::categorical, CrossEntropyForm::per_channel_binary}) {
    const auto analytic = multilayer_ce_loss(probs, labels, form).grad;
    const auto numeric = oracle::numeric_gradient(
        [&](const Tensor<double>& p) { return multilayer_ce_loss(p, labels, form).value; }, probs, 1e-6);
    CHECK(oracle::relative_error(analytic.values(), numeric.values()) <= 1e-3);
  }
}

TEST_CASE("gradient check: choroid_bce_loss") {
  Rng rng(12);
  Tensor<double> probs(2, 1, 4, 4);
  for (Index i = 0; i < probs.size(); ++i) probs.values()[i] = rng.uniform(0.05, 0.95);
  const auto target = random_mask_tensor(rng, 2, 4, 4);
  const auto analytic = choroid_bce_loss(probs, target).grad;
  const auto numeric = oracle::numeric_gradient(
      [&](const Tensor<double>& p) { return choroid_bce_loss(p, target).value; }, probs);
  CHECK(oracle::relative_error(analytic.values(), numeric.values()) <= 1e-3);
}

TEST_CASE("gradient check: bio_regularizer_loss w.r.t. the choroid probability map") {
  // The regressor needs at least 16x16 inputs.
  BioRegressor<double> bio(bio_config(4, 8, 3));
  bio.freeze();
  Rng rng(13);
  Tensor<double> prob(2, 1, 16, 16);
  for (Index i = 0; i < prob.size(); ++i) prob.values()[i] = rng.uniform(0.05, 0.95);
  const Vector<double> own = bio.forward(prob);
  Vector<double> target = own;
  target[0] += 3.0;
  target[1] -= 2.0;
  const auto analytic = bio_regularizer_loss(prob, target, bio).grad;
  const auto numeric = oracle::numeric_gradient(
      [&](const Tensor<double>& p) { return bio_regularizer_loss(p, target, bio).value; }, prob, 1e-5);
  CHECK(oracle::relative_error(analytic.values(), numeric.values()) <= 1e-3);
}

TEST_CASE("bio_regularizer_loss contract") {
  BioRegressor<double> bio(bio_config(4, 8, 5));
  Tensor<double> prob(1, 1, 16, 16);
  prob.values().setConstant(0.3);
  Vector<double> t(1);
  t << 20.0;
  CHECK_THROWS_AS(bio_regularizer_loss(prob, t, bio), std::invalid_argument);
  bio.freeze();
  const Vector<double> own = bio.forward(prob);
  CHECK(bio_regularizer_loss(prob, own, bio).value == 0.0);
  const auto before = bio.digest();
  const auto r = bio_regularizer_loss(prob, t, bio);
  CHECK(r.value > 0.0);
  CHECK(bio.digest() == before);
  for (auto* p : bio.parameters()) CHECK(p->grad.values().isZero());
}

TEST_CASE("fused logit gradients equal the chain rule through the head") {
  Rng rng(14);
  Tensor<double> logits(2, 12, 4, 4);
  for (Index i = 0; i < logits.size(); ++i) logits.values()[i] = rng.normal();
  const auto labels = random_labels(rng, 32, 12);
  const auto probs = softmax_channels(logits);
  const auto fused = softmax_ce_logit_grad(probs, labels);
  const auto chained = softmax_channels_backward(probs, multilayer_ce_loss(probs, labels).grad);
  CHECK(oracle::relative_error(fused.values(), chained.values()) <= 1e-12);

  Tensor<double> z(2, 1, 4, 4);
  for (Index i = 0; i < z.size(); ++i) z.values()[i] = rng.normal();
  const auto p = sigmoid(z);
  const auto target = random_mask_tensor(rng, 2, 4, 4);
  const auto fused_bce = sigmoid_bce_logit_grad(p, target);
  const auto chained_bce = sigmoid_backward(p, choroid_bce_loss(p, target).grad);
  CHECK(oracle::relative_error(fused_bce.values(), chained_bce.values()) <= 1e-12);
}
