#include "bionet/adam.hpp"
#include "bionet/losses.hpp"
#include "bionet/networks.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace bionet;

namespace {

template <typename Scalar>
Tensor<Scalar> random_input(Rng& rng, Index n, Index c, Index h, Index w) {
  Tensor<Scalar> t(n, c, h, w);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = static_cast<Scalar>(rng.uniform());
  return t;
}

NetworkConfig small_unet(Index in, Index out, OutputHead head, std::uint64_t seed) {
  NetworkConfig c;
  c.in_channels = in;
  c.out_channels = out;
  c.base_width = 4;
  c.depth = 2;
  c.norm_groups = 2;
  c.head = head;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("unet output shapes and heads") {
  Rng rng(1);
  UNet<float> ug(global_config(8, 4, 12, 1));
  const auto x = random_input<float>(rng, 1, 1, 128, 128);
  const auto probs = ug.predict(x);
  REQUIRE(probs.channels() == 12);
  REQUIRE(probs.height() == 128);
  REQUIRE(probs.width() == 128);
  const Eigen::ArrayXf sums = probs.sample(0).colwise().sum().transpose().array();
  CHECK((sums - 1.0f).abs().maxCoeff() <= 1e-5f);

  UNet<float> uc(local_config(8, 4, 13, 2));
  const auto c = uc.predict(random_input<float>(rng, 1, 13, 128, 128));
  REQUIRE(c.channels() == 1);
  CHECK((c.values() > 0.0f).all());
  CHECK((c.values() < 1.0f).all());

  CHECK_THROWS_AS(ug.forward(random_input<float>(rng, 1, 1, 120, 128)), std::invalid_argument);
  CHECK_THROWS_AS(ug.forward(random_input<float>(rng, 1, 2, 128, 128)), std::invalid_argument);
}

TEST_CASE("parameter counts are frozen regression constants") {
  NetworkConfig desk = global_config(16, 4, 12, 0);
  // Independently computed from the layer shapes (3x3 convs, group-norm
  // affine pairs, 2x2 transposed convs, 1x1 head).
  CHECK(UNet<float>(desk).parameter_count() == 1943948);
  NetworkConfig defaults = global_config(64, 4, 12, 0);
  CHECK(UNet<float>(defaults).parameter_count() == 31043084);
  CHECK(UNet<float>(local_config(64, 4, 13, 0)).parameter_count() == 31049281);
  CHECK(BioRegressor<float>(bio_config(64, 64, 0)).parameter_count() == 1582721);
}

TEST_CASE("bio regressor output contract") {
  Rng rng(2);
  BioRegressor<float> bio(bio_config(8, 16, 3));
  const auto four = bio.forward(random_input<float>(rng, 4, 1, 40, 24));
  REQUIRE(four.size() == 4);
  CHECK(four.isFinite().all());
  CHECK((four >= 0.0f).all());

  Tensor<float> zeros(1, 1, 32, 32), ones(1, 1, 32, 32);
  ones.values().setOnes();
  CHECK(bio.forward(zeros)[0] != bio.forward(ones)[0]);
  CHECK_THROWS_AS(bio.forward(Tensor<float>(1, 1, 15, 32)), std::invalid_argument);
  CHECK_THROWS_AS(BioRegressor<float>(NetworkConfig{2, 1, 8, 4, 8, 0, OutputHead::none, 0}), std::invalid_argument);
}

TEST_CASE("cascade shapes and the U_C channel count") {
  Rng rng(3);
  UNet<float> ug(global_config(8, 4, 12, 4));
  UNet<float> uc(local_config(8, 4, 13, 5));
  CHECK(uc.config().in_channels == 13);
  const auto out = cascade_forward(random_input<float>(rng, 2, 1, 128, 128), ug, uc);
  CHECK(out.global_probs.batch() == 2);
  CHECK(out.global_probs.channels() == 12);
  CHECK(out.choroid_prob.channels() == 1);
  CHECK(out.choroid_prob.height() == 128);

  UNet<float> ug3(global_config(8, 2, 3, 4));
  UNet<float> uc3(local_config(8, 2, 4, 5));
  CHECK_NOTHROW(cascade_forward(random_input<float>(rng, 1, 1, 16, 16), ug3, uc3));
  CHECK_THROWS_AS(Cascade<float>(ug3, uc), std::invalid_argument);
}

TEST_CASE("cascade is independent across the batch and deterministic") {
  Rng rng(4);
  UNet<float> ug(global_config(4, 3, 12, 6));
  UNet<float> uc(local_config(4, 3, 13, 7));
  const auto x = random_input<float>(rng, 3, 1, 32, 32);
  const auto a = cascade_forward(x, ug, uc);
  const auto b = cascade_forward(x, ug, uc);
  CHECK((a.choroid_prob.values() == b.choroid_prob.values()).all());
  CHECK((a.global_probs.values() == b.global_probs.values()).all());

  Tensor<float> perm(3, 1, 32, 32);
  const int order[3] = {2, 0, 1};
  for (int i = 0; i < 3; ++i) perm.sample(i) = x.sample(order[i]);
  const auto p = cascade_forward(perm, ug, uc);
  for (int i = 0; i < 3; ++i) {
    CHECK((p.choroid_prob.sample(i).array() == a.choroid_prob.sample(order[i]).array()).all());
    CHECK((p.global_probs.sample(i).array() == a.global_probs.sample(order[i]).array()).all());
  }
}

TEST_CASE("gradient check: whole unet") {
  Rng rng(5);
  UNet<double> net(small_unet(2, 3, OutputHead::none, 8));
  const auto x = random_input<double>(rng, 2, 2, 8, 8);
  const auto y = net.forward(x);
  Tensor<double> w = Tensor<double>::zeros_like(y);
  for (Index i = 0; i < w.size(); ++i) w.values()[i] = rng.normal();
  auto objective = [&](const Tensor<double>& in) { return (net.forward(in).values() * w.values()).sum(); };

  net.zero_grad();
  net.forward(x);
  const auto dx = net.backward(w);
  CHECK(oracle::relative_error(dx.values(), oracle::numeric_gradient(objective, x, 1e-5).values()) <= 1e-5);

  // A sample of parameter coordinates from every tensor.
  for (auto* p : net.parameters()) {
    for (int k = 0; k < 3; ++k) {
      const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(p->value.size())));
      const double orig = p->value.values()[i];
      p->value.values()[i] = orig + 1e-5;
      const double fp = objective(x);
      p->value.values()[i] = orig - 1e-5;
      const double fm = objective(x);
      p->value.values()[i] = orig;
      const double numeric = (fp - fm) / 2e-5, analytic = p->grad.values()[i];
      INFO(p->name);
      CHECK(std::abs(numeric - analytic) <= 1e-5 * std::max(1.0, std::abs(numeric)));
    }
  }
}

TEST_CASE("gradient check: cascade end to end through the concatenation") {
  Rng rng(6);
  UNet<double> ug(small_unet(1, 3, OutputHead::softmax, 9));
  UNet<double> uc(small_unet(4, 1, OutputHead::sigmoid, 10));
  Cascade<double> cascade(ug, uc);
  const auto x = random_input<double>(rng, 2, 1, 8, 8);
  LabelBatch labels(2 * 64);
  for (Index i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(rng.below(3));
  Tensor<double> target(2, 1, 8, 8);
  for (Index i = 0; i < target.size(); ++i) target.values()[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;

  auto objective = [&](const Tensor<double>& in) {
    const auto out = Cascade<double>(ug, uc).forward(in);
    return multilayer_ce_loss(out.global_probs, labels).value + choroid_bce_loss(out.choroid_prob, target).value;
  };
  ug.zero_grad();
  uc.zero_grad();
  const auto out = cascade.forward(x);
  const auto dx = cascade.backward(softmax_ce_logit_grad(out.global_probs, labels),
                                   sigmoid_bce_logit_grad(out.choroid_prob, target));
  CHECK(oracle::relative_error(dx.values(), oracle::numeric_gradient(objective, x, 1e-5).values()) <= 1e-4);

  // The choroid loss alone reaches U_G's parameters.
  ug.zero_grad();
  uc.zero_grad();
  const auto out2 = cascade.forward(x);
  cascade.backward(Tensor<double>(), sigmoid_bce_logit_grad(out2.choroid_prob, target));
  double norm = 0;
  for (auto* p : ug.parameters()) norm += p->grad.values().square().sum();
  CHECK(norm > 0.0);
}

TEST_CASE("freeze contract") {
  BioRegressor<float> bio(bio_config(8, 8, 11));
  CHECK(!bio.is_frozen());
  bio.freeze();
  CHECK(bio.is_frozen());
  for (auto* p : bio.parameters()) CHECK(!p->trainable);
  Adam<float> adam(bio.parameters());
  CHECK(adam.size() == 0);

  const auto before = bio.digest();
  CHECK(before == bio.frozen_digest());
  Rng rng(12);
  auto x = random_input<float>(rng, 2, 1, 32, 32);
  Vector<float> t(2);
  t << 10.0f, 20.0f;
  for (int step = 0; step < 3; ++step) {
    adam.zero_grad();
    bio_regularizer_loss(x, t, bio);
    adam.step(0.01);
  }
  CHECK(bio.digest() == before);
}

TEST_CASE("adam moves trainable parameters downhill") {
  Rng rng(13);
  BioRegressor<float> bio(bio_config(8, 8, 14));
  Adam<float> adam(bio.parameters());
  CHECK(adam.size() == bio.parameters().size());
  auto x = random_input<float>(rng, 4, 1, 32, 32);
  Vector<float> t(4);
  t << 10.0f, 12.0f, 14.0f, 16.0f;
  const double first = bio_mae_loss<float>(bio.forward(x), t).value;
  for (int step = 0; step < 60; ++step) {
    adam.zero_grad();
    const auto loss = bio_mae_loss<float>(bio.forward(x), t);
    bio.backward(loss.grad);
    adam.step(1e-3);
  }
  CHECK(bio_mae_loss<float>(bio.forward(x), t).value < first);
}
