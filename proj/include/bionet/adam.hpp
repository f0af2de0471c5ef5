#pragma once

#include "bionet/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace bionet {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over the trainable subset of the given parameters. Parameters that
/// are frozen when the optimizer is built are never touched.
template <typename Scalar>
class Adam {
 public:
  Adam(const ParameterList<Scalar>& params, AdamOptions options = {}) : options_(options) {
    for (auto* p : params) {
      if (!p->trainable) continue;
      params_.push_back(p);
      m_.push_back(Tensor<Scalar>::zeros_like(p->value));
      v_.push_back(Tensor<Scalar>::zeros_like(p->value));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.set_zero();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(options_.beta1);
    const auto b2 = static_cast<Scalar>(options_.beta2);
    const auto step_size = static_cast<Scalar>(lr / bc1);
    const auto inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<Scalar>(options_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad.values();
      auto& m = m_[i].values();
      auto& v = v_[i].values();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
      params_[i]->value.values() -= step_size * m / (v.sqrt() * inv_sqrt_bc2 + eps);
    }
  }

  std::size_t size() const { return params_.size(); }
  long steps() const { return t_; }

 private:
  AdamOptions options_;
  ParameterList<Scalar> params_;
  std::vector<Tensor<Scalar>> m_, v_;
  long t_ = 0;
};

}  // namespace bionet
