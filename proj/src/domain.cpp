#include "bionet/domain.hpp"

#include "bionet/metrics.hpp"

#include <cmath>
#include <sstream>

namespace bionet {

Eigen::Index BoundaryCurve::present_count() const {
  Eigen::Index n = 0;
  for (const auto& r : rows) n += r.has_value() ? 1 : 0;
  return n;
}

namespace {

std::string dims(Eigen::Index h, Eigen::Index w) {
  std::ostringstream os;
  os << h << "x" << w;
  return os.str();
}

}  // namespace

std::vector<std::string> validate_sample(const Sample& s) {
  std::vector<std::string> out;
  const auto& px = s.image.pixels;
  const Eigen::Index h = s.image.height(), w = s.image.width();

  if (px.size() > 0 && (!px.isFinite().all() || (px < 0.0f).any() || (px > 1.0f).any()))
    out.push_back("intensity-range: image intensities must be finite and in [0,1]");
  if (h < kMinImageSize || w < kMinImageSize)
    out.push_back("minimum-size: image is " + dims(h, w) + ", height >= 16 and width >= 16 required");

  const bool layer_dims_ok = s.layers.height() == h && s.layers.width() == w;
  if (!layer_dims_ok)
    out.push_back("layer-dimensions: layer map is " + dims(s.layers.height(), s.layers.width()) + ", image is " +
                  dims(h, w));
  if (s.layers.num_classes <= 0 || s.layers.num_classes > 256) {
    out.push_back("label-range: num_classes must be in [1, 256]");
  } else if (s.layers.labels.size() > 0 && s.layers.labels.maxCoeff() >= s.layers.num_classes) {
    out.push_back("label-range: label id " + std::to_string(int(s.layers.labels.maxCoeff())) + " >= num_classes " +
                  std::to_string(s.layers.num_classes));
  }

  const bool mask_dims_ok = s.choroid.height() == h && s.choroid.width() == w;
  if (!mask_dims_ok)
    out.push_back("mask-dimensions: choroid mask is " + dims(s.choroid.height(), s.choroid.width()) + ", image is " +
                  dims(h, w));
  if (s.choroid.mask.size() > 0 && (s.choroid.mask > 1).any())
    out.push_back("binary-mask: choroid mask values must be exactly 0 or 1");

  if (s.choroid_class < 0 || s.choroid_class >= s.layers.num_classes) {
    out.push_back("choroid-class: choroid class id " + std::to_string(s.choroid_class) + " outside [0, num_classes)");
  } else if (layer_dims_ok && mask_dims_ok) {
    const auto expected = ChoroidMask::of_class(s.layers, s.choroid_class);
    if ((expected.mask != s.choroid.mask).any())
      out.push_back("choroid-consistency: choroid mask differs from the pixels labelled class " +
                    std::to_string(s.choroid_class));
  }

  const double t = s.thickness.value;
  if (!std::isfinite(t) || t < 0.0) {
    out.push_back("thickness-range: thickness must be finite and non-negative");
  } else {
    const double expected = thickness_of(s.choroid).value;
    if (std::abs(expected - t) > 1e-6) {
      std::ostringstream os;
      os.precision(10);
      os << "thickness-consistency: stored thickness " << t << " differs from mask thickness " << expected;
      out.push_back(os.str());
    }
  }
  return out;
}

bool labels_monotone(const LayerLabelMap& layers) {
  for (Eigen::Index x = 0; x < layers.width(); ++x)
    for (Eigen::Index y = 1; y < layers.height(); ++y)
      if (layers.labels(y, x) < layers.labels(y - 1, x)) return false;
  return true;
}

Sample make_sample(std::string id, BScan image, LayerLabelMap layers, int choroid_class) {
  Sample s;
  s.id = std::move(id);
  s.image = std::move(image);
  s.layers = std::move(layers);
  s.choroid_class = choroid_class;
  s.choroid = ChoroidMask::of_class(s.layers, choroid_class);
  s.thickness = thickness_of(s.choroid);
  return s;
}

}  // namespace bionet
