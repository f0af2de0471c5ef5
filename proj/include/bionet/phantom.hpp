#pragma once

#include "bionet/domain.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bionet {

/// Synthetic OCT B-scan generator settings. Lengths are in pixels unless
/// noted; band thicknesses other than the choroid scale with height / 128.
struct PhantomConfig {
  std::uint64_t seed = 0;
  Eigen::Index height = 128;
  Eigen::Index width = 128;
  int num_layers = kDefaultNumClasses;
  int choroid_class = kDefaultChoroidClass;
  /// Moving-average window (columns) applied to the boundary random walks.
  double boundary_smoothness = 32.0;
  double min_band_thickness = 2.0;
  std::array<double, 2> choroid_thickness_range{20.0, 50.0};
  /// Gaussian width of the choroid-sclera intensity transition.
  double csi_blur_sigma = 2.0;
  double speckle_strength = 0.3;

  /// 992 x 512 B-scans with proportionally scaled band geometry.
  static PhantomConfig full_scale(std::uint64_t seed = 0);

  /// Empty when valid, otherwise one message per problem.
  std::vector<std::string> problems() const;
  void validate() const;
};

/// A phantom sample plus the fractional surfaces it was rasterized from.
/// surfaces[j] is the first row of class j + 1, so class k occupies rows
/// [surfaces[k-1], surfaces[k]).
struct PhantomSample {
  Sample sample;
  std::vector<std::vector<double>> surfaces;

  /// Choroid's upper surface (its first row) as a curve.
  BoundaryCurve choroid_upper() const;
  /// Choroid's lower surface (its last row, i.e. next surface minus one).
  BoundaryCurve choroid_lower() const;
};

PhantomSample generate_phantom_with_surfaces(const PhantomConfig& config, std::uint64_t index);
Sample generate_phantom(const PhantomConfig& config, std::uint64_t index);

/// Per-class mean intensity used by the generator.
std::vector<float> band_intensities(int num_layers, int choroid_class);

}  // namespace bionet
