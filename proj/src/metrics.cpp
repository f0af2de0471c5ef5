#include "bionet/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace bionet {

namespace {

struct Confusion {
  Eigen::Index tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion confusion(const ChoroidMask& pred, const ChoroidMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw std::invalid_argument("metrics: mask dimension mismatch (" + std::to_string(pred.height()) + "x" +
                                std::to_string(pred.width()) + " vs " + std::to_string(gt.height()) + "x" +
                                std::to_string(gt.width()) + ")");
  const auto p = (pred.mask != 0);
  const auto g = (gt.mask != 0);
  Confusion c;
  c.tp = (p && g).count();
  c.fp = (p && !g).count();
  c.fn = (!p && g).count();
  c.tn = pred.mask.size() - c.tp - c.fp - c.fn;
  return c;
}

}  // namespace

double dice(const ChoroidMask& pred, const ChoroidMask& gt) {
  const auto c = confusion(pred, gt);
  const auto denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double iou(const ChoroidMask& pred, const ChoroidMask& gt) {
  const auto c = confusion(pred, gt);
  const auto uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

double accuracy(const ChoroidMask& pred, const ChoroidMask& gt) {
  const auto c = confusion(pred, gt);
  const auto total = c.tp + c.fp + c.fn + c.tn;
  return total == 0 ? 1.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
}

double sensitivity(const ChoroidMask& pred, const ChoroidMask& gt) {
  const auto c = confusion(pred, gt);
  const auto pos = c.tp + c.fn;
  return pos == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(pos);
}

std::pair<BoundaryCurve, BoundaryCurve> extract_boundaries(const ChoroidMask& mask) {
  BoundaryCurve upper, lower;
  upper.height = lower.height = mask.height();
  upper.rows.resize(static_cast<std::size_t>(mask.width()));
  lower.rows.resize(static_cast<std::size_t>(mask.width()));
  for (Eigen::Index x = 0; x < mask.width(); ++x) {
    for (Eigen::Index y = 0; y < mask.height(); ++y) {
      if (mask.mask(y, x) == 0) continue;
      if (!upper.rows[x]) upper.rows[x] = static_cast<double>(y);
      lower.rows[x] = static_cast<double>(y);
    }
  }
  return {upper, lower};
}

std::optional<double> ausde(const BoundaryCurve& pred, const BoundaryCurve& gt) {
  if (pred.width() != gt.width())
    throw std::invalid_argument("ausde: width mismatch (" + std::to_string(pred.width()) + " vs " +
                                std::to_string(gt.width()) + ")");
  const double penalty = static_cast<double>(std::max(pred.height, gt.height));
  double sum = 0.0;
  Eigen::Index used = 0;
  for (std::size_t x = 0; x < pred.rows.size(); ++x) {
    const auto& p = pred.rows[x];
    const auto& g = gt.rows[x];
    if (p && g) {
      sum += std::abs(*p - *g);
    } else if (p || g) {
      sum += penalty;
    } else {
      continue;
    }
    ++used;
  }
  if (used == 0) return std::nullopt;
  return sum / static_cast<double>(used);
}

ChoroidAusde choroid_ausde(const ChoroidMask& pred, const ChoroidMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw std::invalid_argument("choroid_ausde: mask dimension mismatch");
  const auto [pu, pl] = extract_boundaries(pred);
  const auto [gu, gl] = extract_boundaries(gt);
  ChoroidAusde out;
  out.upper = ausde(pu, gu);
  out.lower = ausde(pl, gl);
  if (out.upper && out.lower) out.mean = 0.5 * (*out.upper + *out.lower);
  return out;
}

Thickness thickness_of(const ChoroidMask& mask) {
  const Eigen::Array<Eigen::Index, 1, Eigen::Dynamic> counts = (mask.mask != 0).cast<Eigen::Index>().colwise().sum();
  const Eigen::Index columns = (counts > 0).count();
  if (columns == 0) return {0.0};
  return {static_cast<double>(counts.sum()) / static_cast<double>(columns)};
}

MetricsReport evaluate_dataset(const std::vector<ChoroidMask>& predictions, const std::vector<ChoroidMask>& gts) {
  if (predictions.size() != gts.size())
    throw std::invalid_argument("evaluate_dataset: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(gts.size()) + " ground truths");
  MetricsReport r;
  r.n_samples = static_cast<int>(gts.size());
  int defined = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    r.dice += dice(predictions[i], gts[i]);
    r.iou += iou(predictions[i], gts[i]);
    r.accuracy += accuracy(predictions[i], gts[i]);
    r.sensitivity += sensitivity(predictions[i], gts[i]);
    const auto a = choroid_ausde(predictions[i], gts[i]);
    if (a.mean) {
      r.ausde_upper += *a.upper;
      r.ausde_lower += *a.lower;
      r.ausde_mean += *a.mean;
      ++defined;
    } else {
      ++r.n_ausde_undefined;
    }
  }
  if (r.n_samples > 0) {
    const double n = r.n_samples;
    r.dice /= n;
    r.iou /= n;
    r.accuracy /= n;
    r.sensitivity /= n;
  }
  if (defined > 0) {
    r.ausde_upper /= defined;
    r.ausde_lower /= defined;
    r.ausde_mean /= defined;
  }
  return r;
}

ChoroidMask binarize(const ImageGrid& prob, float threshold) {
  return {(prob >= threshold).cast<std::uint8_t>()};
}

ChoroidMask flip_horizontal(const ChoroidMask& mask) { return {mask.mask.rowwise().reverse()}; }

std::string metrics_row(const MetricsReport& r, char delimiter) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.2f%c%.2f%c%.2f%c%.2f%c%.2f", 100.0 * r.iou, delimiter, r.ausde_mean, delimiter,
                100.0 * r.dice, delimiter, 100.0 * r.accuracy, delimiter, 100.0 * r.sensitivity);
  return buf;
}

std::string metrics_json(const MetricsReport& r) {
  const nlohmann::ordered_json j = {{"dice", r.dice},
                                    {"iou", r.iou},
                                    {"ausde_upper", r.ausde_upper},
                                    {"ausde_lower", r.ausde_lower},
                                    {"ausde_mean", r.ausde_mean},
                                    {"accuracy", r.accuracy},
                                    {"sensitivity", r.sensitivity},
                                    {"n_samples", r.n_samples},
                                    {"n_ausde_undefined", r.n_ausde_undefined}};
  return j.dump(2) + "\n";
}

}  // namespace bionet
