#pragma once

#include "bionet/domain.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace bionet {

/// Macro-averaged choroid segmentation metrics. Ratios are in [0, 1], AUSDE
/// in pixels. Samples whose AUSDE is undefined (no boundary in either
/// mask) are excluded from the AUSDE averages and counted separately.
struct MetricsReport {
  double dice = 0.0;
  double iou = 0.0;
  double ausde_upper = 0.0;
  double ausde_lower = 0.0;
  double ausde_mean = 0.0;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  int n_samples = 0;
  int n_ausde_undefined = 0;
};

double dice(const ChoroidMask& pred, const ChoroidMask& gt);
double iou(const ChoroidMask& pred, const ChoroidMask& gt);
double accuracy(const ChoroidMask& pred, const ChoroidMask& gt);
double sensitivity(const ChoroidMask& pred, const ChoroidMask& gt);

/// Per column: upper = first row inside the mask, lower = last row inside.
std::pair<BoundaryCurve, BoundaryCurve> extract_boundaries(const ChoroidMask& mask);

/// Mean unsigned per-column distance. A column present in only one curve
/// costs the image height; columns absent in both are skipped. Returns
/// std::nullopt when every column is skipped.
std::optional<double> ausde(const BoundaryCurve& pred, const BoundaryCurve& gt);

struct ChoroidAusde {
  std::optional<double> upper;
  std::optional<double> lower;
  std::optional<double> mean;
};

ChoroidAusde choroid_ausde(const ChoroidMask& pred, const ChoroidMask& gt);

/// Mean mask-pixel count over columns containing the mask; 0 when empty.
Thickness thickness_of(const ChoroidMask& mask);

MetricsReport evaluate_dataset(const std::vector<ChoroidMask>& predictions, const std::vector<ChoroidMask>& gts);

/// Probability grid thresholded at 0.5 (values >= 0.5 become 1).
ChoroidMask binarize(const ImageGrid& prob, float threshold = 0.5f);

/// Mirror the columns (left-right flip).
ChoroidMask flip_horizontal(const ChoroidMask& mask);

/// Column order and units used for metric tables.
inline constexpr const char* kMetricsHeader = "IOU,AUSDE,DI,Acc,Sen";
inline constexpr const char* kMetricsUnits = "units: IOU (%), AUSDE (pixels), DI (%), Acc (%), Sen (%)";

/// "IOU,AUSDE,DI,Acc,Sen" values, percentages for ratios.
std::string metrics_row(const MetricsReport& report, char delimiter = ',');

/// Multi-line JSON object with every field.
std::string metrics_json(const MetricsReport& report);

}  // namespace bionet
