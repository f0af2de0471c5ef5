#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. They share no code with the library.

#include "bionet/domain.hpp"
#include "bionet/rng.hpp"
#include "bionet/tensor.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace oracle {

using bionet::ChoroidMask;

struct Confusion {
  double tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const ChoroidMask& p, const ChoroidMask& g) {
  Confusion c;
  for (Eigen::Index y = 0; y < g.height(); ++y)
    for (Eigen::Index x = 0; x < g.width(); ++x) {
      const bool a = p.mask(y, x) != 0, b = g.mask(y, x) != 0;
      if (a && b) c.tp += 1;
      else if (a) c.fp += 1;
      else if (b) c.fn += 1;
      else c.tn += 1;
    }
  return c;
}

inline double dice(const ChoroidMask& p, const ChoroidMask& g) {
  const auto c = confusion(p, g);
  const double denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2 * c.tp / denom;
}

inline double iou(const ChoroidMask& p, const ChoroidMask& g) {
  const auto c = confusion(p, g);
  const double denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : c.tp / denom;
}

inline double accuracy(const ChoroidMask& p, const ChoroidMask& g) {
  const auto c = confusion(p, g);
  return (c.tp + c.tn) / (c.tp + c.tn + c.fp + c.fn);
}

inline double sensitivity(const ChoroidMask& p, const ChoroidMask& g) {
  const auto c = confusion(p, g);
  return c.tp + c.fn == 0 ? 1.0 : c.tp / (c.tp + c.fn);
}

/// Per column first / last mask row, or nullopt.
inline std::vector<std::optional<double>> column_edge(const ChoroidMask& m, bool upper) {
  std::vector<std::optional<double>> out(static_cast<std::size_t>(m.width()));
  for (Eigen::Index x = 0; x < m.width(); ++x)
    for (Eigen::Index y = 0; y < m.height(); ++y)
      if (m.mask(y, x)) {
        if (upper && !out[x]) out[x] = static_cast<double>(y);
        if (!upper) out[x] = static_cast<double>(y);
      }
  return out;
}

inline std::optional<double> ausde(const std::vector<std::optional<double>>& a,
                                   const std::vector<std::optional<double>>& b, double height) {
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] && b[i]) sum += std::abs(*a[i] - *b[i]), ++n;
    else if (a[i] || b[i]) sum += height, ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

inline std::optional<double> ausde_mean(const ChoroidMask& p, const ChoroidMask& g) {
  const double h = static_cast<double>(g.height());
  const auto u = ausde(column_edge(p, true), column_edge(g, true), h);
  const auto l = ausde(column_edge(p, false), column_edge(g, false), h);
  if (!u || !l) return std::nullopt;
  return 0.5 * (*u + *l);
}

inline double thickness(const ChoroidMask& m) {
  double total = 0;
  int cols = 0;
  for (Eigen::Index x = 0; x < m.width(); ++x) {
    int count = 0;
    for (Eigen::Index y = 0; y < m.height(); ++y) count += m.mask(y, x) ? 1 : 0;
    if (count > 0) total += count, ++cols;
  }
  return cols == 0 ? 0.0 : total / cols;
}

inline ChoroidMask random_mask(bionet::Rng& rng, Eigen::Index h, Eigen::Index w) {
  ChoroidMask m = ChoroidMask::zeros(h, w);
  const double density = rng.uniform(0.0, 1.0);
  for (Eigen::Index x = 0; x < w; ++x)
    for (Eigen::Index y = 0; y < h; ++y) m.mask(y, x) = rng.bernoulli(density) ? 1 : 0;
  return m;
}

/// Central finite difference of f at x, one coordinate at a time.
inline bionet::Tensor<double> numeric_gradient(const std::function<double(const bionet::Tensor<double>&)>& f,
                                               bionet::Tensor<double> x, double step = 1e-4) {
  auto g = bionet::Tensor<double>::zeros_like(x);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x.values()[i];
    x.values()[i] = orig + step;
    const double fp = f(x);
    x.values()[i] = orig - step;
    const double fm = f(x);
    x.values()[i] = orig;
    g.values()[i] = (fp - fm) / (2 * step);
  }
  return g;
}

/// max |a - b| / max(|a|, |b|, floor) over all coordinates.
template <typename A, typename B>
double max_relative_error(const A& a, const B& b, double floor = 1e-6) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

/// ||a - b|| / max(||a||, ||b||) over the flattened values.
template <typename A, typename B>
double relative_error(const A& a, const B& b) {
  double diff = 0, na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    diff += (x - y) * (x - y);
    na += x * x;
    nb += y * y;
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
}

}  // namespace oracle
