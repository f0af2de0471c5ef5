#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bionet {

/// Grids are column-major, rows = depth (height), cols = A-scans (width),
/// so a single A-scan is a contiguous column.
using ImageGrid = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic>;
using LabelGrid = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr int kDefaultNumClasses = 12;
inline constexpr int kDefaultChoroidClass = 9;
inline constexpr Eigen::Index kMinImageSize = 16;

/// Grayscale B-scan, intensities in [0, 1].
struct BScan {
  ImageGrid pixels;

  Eigen::Index height() const { return pixels.rows(); }
  Eigen::Index width() const { return pixels.cols(); }
};

struct LayerLabelMap {
  LabelGrid labels;
  int num_classes = kDefaultNumClasses;

  Eigen::Index height() const { return labels.rows(); }
  Eigen::Index width() const { return labels.cols(); }
};

/// Binary choroid mask, values exactly 0 or 1.
struct ChoroidMask {
  LabelGrid mask;

  Eigen::Index height() const { return mask.rows(); }
  Eigen::Index width() const { return mask.cols(); }
  Eigen::Index count() const { return mask.cast<Eigen::Index>().sum(); }

  static ChoroidMask zeros(Eigen::Index height, Eigen::Index width) { return {LabelGrid::Zero(height, width)}; }
  static ChoroidMask of_class(const LayerLabelMap& layers, int class_id) {
    return {(layers.labels == static_cast<std::uint8_t>(class_id)).cast<std::uint8_t>()};
  }
};

/// Per-column row coordinate of a surface; std::nullopt marks an absent column.
struct BoundaryCurve {
  std::vector<std::optional<double>> rows;
  Eigen::Index height = 0;

  Eigen::Index width() const { return static_cast<Eigen::Index>(rows.size()); }
  Eigen::Index present_count() const;
};

struct Thickness {
  double value = 0.0;
};

struct Sample {
  BScan image;
  LayerLabelMap layers;
  ChoroidMask choroid;
  Thickness thickness;
  std::string id;
  int choroid_class = kDefaultChoroidClass;
};

/// One entry per violated invariant, each starting with the rule name
/// (e.g. "binary-mask: ..."). Empty for a consistent sample.
std::vector<std::string> validate_sample(const Sample& sample);

/// Scanning any column top to bottom, class ids never decrease.
bool labels_monotone(const LayerLabelMap& layers);

/// Sample built from an image and a layer map; the mask and thickness are
/// derived so the result is consistent by construction.
Sample make_sample(std::string id, BScan image, LayerLabelMap layers, int choroid_class);

}  // namespace bionet
