#include "bionet/layers.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace bionet;

namespace {

using T = Tensor<double>;

T random_tensor(Rng& rng, Index n, Index c, Index h, Index w) {
  T t(n, c, h, w);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = rng.normal();
  return t;
}

/// Checks input and parameter gradients of a layer under the scalar
/// objective sum(weights * forward(x)).
template <typename Fwd, typename Bwd>
void check_gradients(Fwd fwd, Bwd bwd, const T& x, const ParameterList<double>& params, Rng& rng,
                     double tol = 1e-6) {
  const T y = fwd(x);
  const T weights = random_tensor(rng, y.batch(), y.channels(), y.height(), y.width());
  auto objective = [&](const T& in) { return (fwd(in).values() * weights.values()).sum(); };

  for (auto* p : params) p->grad.set_zero();
  fwd(x);
  const T dx = bwd(weights);
  const T numeric = oracle::numeric_gradient(objective, x, 1e-5);
  CHECK(oracle::relative_error(dx.values(), numeric.values()) <= tol);

  for (auto* p : params) {
    T numeric_p = T::zeros_like(p->value);
    for (Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.values()[i];
      p->value.values()[i] = orig + 1e-5;
      const double fp = objective(x);
      p->value.values()[i] = orig - 1e-5;
      const double fm = objective(x);
      p->value.values()[i] = orig;
      numeric_p.values()[i] = (fp - fm) / 2e-5;
    }
    INFO(p->name);
    CHECK(oracle::relative_error(p->grad.values(), numeric_p.values()) <= tol);
  }
}

/// Direct 7-loop convolution.
T naive_conv(const T& x, const T& weight, const T& bias, Index stride, Index pad) {
  const Index k = weight.height();
  const Index oh = conv_output_size(x.height(), k, stride, pad), ow = conv_output_size(x.width(), k, stride, pad);
  T y(x.batch(), weight.batch(), oh, ow);
  for (Index n = 0; n < x.batch(); ++n)
    for (Index o = 0; o < weight.batch(); ++o)
      for (Index yy = 0; yy < oh; ++yy)
        for (Index xx = 0; xx < ow; ++xx) {
          double acc = bias.values()[o];
          for (Index c = 0; c < x.channels(); ++c)
            for (Index ky = 0; ky < k; ++ky)
              for (Index kx = 0; kx < k; ++kx) {
                const Index iy = yy * stride + ky - pad, ix = xx * stride + kx - pad;
                if (iy < 0 || ix < 0 || iy >= x.height() || ix >= x.width()) continue;
                acc += weight(o, c, ky, kx) * x(n, c, iy, ix);
              }
          y(n, o, yy, xx) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d matches a direct convolution") {
  Rng rng(1);
  for (auto [k, stride, pad] : {std::tuple<Index, Index, Index>{3, 1, 1}, {3, 2, 1}, {1, 1, 0}, {2, 2, 0}}) {
    Conv2d<double> conv("c", 3, 4, k, stride, pad);
    conv.initialize(rng);
    for (Index i = 0; i < 4; ++i) conv.bias().value.values()[i] = rng.normal();
    const T x = random_tensor(rng, 2, 3, 7, 6);
    const T y = conv.forward(x);
    const T ref = naive_conv(x, conv.weight().value, conv.bias().value, stride, pad);
    REQUIRE(y.same_shape(ref));
    CHECK((y.values() - ref.values()).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("gradient check: conv2d") {
  Rng rng(2);
  for (auto [k, stride, pad] : {std::tuple<Index, Index, Index>{3, 1, 1}, {3, 2, 1}, {1, 1, 0}}) {
    Conv2d<double> conv("c", 2, 3, k, stride, pad);
    conv.initialize(rng);
    ParameterList<double> params;
    conv.collect(params);
    check_gradients([&](const T& x) { return conv.forward(x); }, [&](const T& d) { return conv.backward(d); },
                    random_tensor(rng, 2, 2, 6, 6), params, rng);
  }
}

TEST_CASE("gradient check: upconv, group norm, linear") {
  Rng rng(3);
  UpConv2x2<double> up("u", 4, 2);
  up.initialize(rng);
  ParameterList<double> pu;
  up.collect(pu);
  const T x1 = random_tensor(rng, 2, 4, 3, 3);
  CHECK(up.forward(x1).height() == 6);
  check_gradients([&](const T& x) { return up.forward(x); }, [&](const T& d) { return up.backward(d); }, x1, pu, rng);

  GroupNorm<double> gn("g", 4, 2);
  ParameterList<double> pg;
  gn.collect(pg);
  REQUIRE(pg.size() == 2);
  for (Index i = 0; i < 4; ++i) {
    pg[0]->value.values()[i] = rng.uniform(0.5, 1.5);
    pg[1]->value.values()[i] = rng.normal();
  }
  check_gradients([&](const T& x) { return gn.forward(x); }, [&](const T& d) { return gn.backward(d); },
                  random_tensor(rng, 2, 4, 3, 3), pg, rng);

  Linear<double> fc("l", 6, 3);
  fc.initialize(rng);
  ParameterList<double> pl;
  fc.collect(pl);
  check_gradients([&](const T& x) { return fc.forward(x); }, [&](const T& d) { return fc.backward(d); },
                  random_tensor(rng, 3, 6, 1, 1), pl, rng);
}

TEST_CASE("group norm normalizes each sample and group") {
  Rng rng(4);
  GroupNorm<double> gn("g", 4, 2);
  T x = random_tensor(rng, 3, 4, 5, 5);
  x.values() = x.values() * 3.0 + 2.0;
  const T y = gn.forward(x);
  for (Index n = 0; n < 3; ++n)
    for (Index g = 0; g < 2; ++g) {
      const auto block = y.sample(n).middleRows(2 * g, 2);
      const double mean = block.mean();
      const double var = (block.array() - mean).square().mean();
      CHECK(std::abs(mean) <= 1e-12);
      CHECK(std::abs(var - 1.0) <= 1e-3);
    }
}

TEST_CASE("gradient check: relu, max pool, softmax, sigmoid") {
  Rng rng(5);
  Relu<double> relu;
  check_gradients([&](const T& x) { return relu.forward(x); }, [&](const T& d) { return relu.backward(d); },
                  random_tensor(rng, 2, 2, 4, 4), {}, rng);
  MaxPool2<double> pool;
  check_gradients([&](const T& x) { return pool.forward(x); }, [&](const T& d) { return pool.backward(d); },
                  random_tensor(rng, 2, 2, 4, 4), {}, rng);
  T probs;
  check_gradients(
      [&](const T& x) { return probs = softmax_channels(x); },
      [&](const T& d) { return softmax_channels_backward(probs, d); }, random_tensor(rng, 2, 5, 3, 3), {}, rng);
  check_gradients([&](const T& x) { return probs = sigmoid(x); },
                  [&](const T& d) { return sigmoid_backward(probs, d); }, random_tensor(rng, 2, 1, 3, 3), {}, rng);
}

TEST_CASE("softmax is normalized and stable for large logits") {
  Rng rng(6);
  T x = random_tensor(rng, 2, 12, 4, 4);
  x.values() *= 200.0;
  const T p = softmax_channels(x);
  CHECK(p.values().isFinite().all());
  for (Index n = 0; n < 2; ++n) {
    const Eigen::ArrayXd sums = p.sample(n).colwise().sum().transpose().array();
    CHECK((sums - 1.0).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("frozen layers leave parameter gradients untouched") {
  Rng rng(7);
  Conv2d<double> conv("c", 1, 2, 3, 1, 1);
  conv.initialize(rng);
  conv.weight().trainable = false;
  conv.bias().trainable = false;
  const T x = random_tensor(rng, 1, 1, 5, 5);
  conv.backward(conv.forward(x));
  CHECK(conv.weight().grad.values().isZero());
  CHECK(conv.bias().grad.values().isZero());
}
