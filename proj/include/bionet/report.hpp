#pragma once

#include "bionet/domain.hpp"
#include "bionet/metrics.hpp"
#include "bionet/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace bionet {

struct TableRow {
  std::string method;
  MetricsReport metrics;
};

/// Units line, then "Method,IOU,AUSDE,DI,Acc,Sen", then one row per entry.
std::string metrics_table(const std::vector<TableRow>& rows, char delimiter = ',');

/// Fixed-width rendering of the same table for terminals.
std::string metrics_table_text(const std::vector<TableRow>& rows);

/// B-scan in gray with the mask tinted semi-transparent pink. When `gt` is
/// given its boundaries are drawn in green.
void write_overlay_png(const std::filesystem::path& path, const ImageGrid& image, const ChoroidMask& mask,
                       const ChoroidMask* gt = nullptr, float alpha = 0.45f);

struct CurveSeries {
  std::string label;
  std::vector<double> values;
};

/// Line plot of the series against their index, with axes, a legend and
/// the y-range printed.
void write_curve_plot(const std::filesystem::path& path, const std::vector<CurveSeries>& series,
                      const std::string& title, int width = 640, int height = 400);

/// The total training loss of every log, one curve per log labelled by mode.
void write_loss_plot(const std::filesystem::path& path, const std::vector<TrainLog>& logs);

}  // namespace bionet
