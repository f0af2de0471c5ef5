#include "bionet/report.hpp"

#include "bionet/dataset_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

namespace bionet {

std::string metrics_table(const std::vector<TableRow>& rows, char delimiter) {
  std::string header = kMetricsHeader;
  if (delimiter != ',') std::replace(header.begin(), header.end(), ',', delimiter);
  std::string out = std::string("# ") + kMetricsUnits + "\n";
  out += "Method" + std::string(1, delimiter) + header + "\n";
  for (const auto& r : rows) out += r.method + delimiter + metrics_row(r.metrics, delimiter) + "\n";
  return out;
}

std::string metrics_table_text(const std::vector<TableRow>& rows) {
  std::size_t method_width = 6;
  for (const auto& r : rows) method_width = std::max(method_width, r.method.size());
  const int mw = static_cast<int>(method_width);
  char buf[256];
  std::string out = std::string(kMetricsUnits) + "\n";
  std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s %8s %8s\n", mw, "Method", "IOU", "AUSDE", "DI", "Acc", "Sen");
  out += buf;
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    std::snprintf(buf, sizeof buf, "%-*s %8.2f %8.2f %8.2f %8.2f %8.2f\n", mw, r.method.c_str(), 100.0 * m.iou,
                  m.ausde_mean, 100.0 * m.dice, 100.0 * m.accuracy, 100.0 * m.sensitivity);
    out += buf;
  }
  return out;
}

namespace {

struct Color {
  float r, g, b;
};

constexpr Color kWhite{1.0f, 1.0f, 1.0f};
constexpr Color kBlack{0.0f, 0.0f, 0.0f};
constexpr Color kGrid{0.88f, 0.88f, 0.88f};
constexpr std::array<Color, 6> kPalette{{{0.12f, 0.47f, 0.71f},
                                         {1.00f, 0.50f, 0.05f},
                                         {0.17f, 0.63f, 0.17f},
                                         {0.84f, 0.15f, 0.16f},
                                         {0.58f, 0.40f, 0.74f},
                                         {0.55f, 0.34f, 0.29f}}};

struct Canvas {
  ImageGrid r, g, b;

  Canvas(int width, int height, Color fill)
      : r(ImageGrid::Constant(height, width, fill.r)),
        g(ImageGrid::Constant(height, width, fill.g)),
        b(ImageGrid::Constant(height, width, fill.b)) {}

  int width() const { return static_cast<int>(r.cols()); }
  int height() const { return static_cast<int>(r.rows()); }

  void set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= width() || y >= height()) return;
    r(y, x) = c.r;
    g(y, x) = c.g;
    b(y, x) = c.b;
  }

  void line(int x0, int y0, int x1, int y1, Color c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void thick_line(int x0, int y0, int x1, int y1, Color c) {
    line(x0, y0, x1, y1, c);
    line(x0, y0 + 1, x1, y1 + 1, c);
  }

  void fill_rect(int x0, int y0, int w, int h, Color c) {
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) set(x, y, c);
  }

  void save(const std::filesystem::path& path) const { write_png_rgb(path, r, g, b); }
};

// 5x7 bitmap glyphs; lowercase letters render as uppercase.
const std::map<char, std::array<std::uint8_t, 7>>& font() {
  static const std::map<char, std::array<std::uint8_t, 7>> glyphs = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
  };
  return glyphs;
}

constexpr int kGlyphAdvance = 6;

void draw_text(Canvas& c, int x, int y, const std::string& text, Color color) {
  for (char ch : text) {
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (const auto it = font().find(up); it != font().end()) {
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if (it->second[row] & (0x10 >> col)) c.set(x + col, y + row, color);
    }
    x += kGlyphAdvance;
  }
}

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

void write_overlay_png(const std::filesystem::path& path, const ImageGrid& image, const ChoroidMask& mask,
                       const ChoroidMask* gt, float alpha) {
  if (image.rows() != mask.height() || image.cols() != mask.width())
    throw std::invalid_argument("write_overlay_png: image and mask sizes differ");
  const Color tint{1.0f, 0.41f, 0.71f};
  ImageGrid r = image, g = image, b = image;
  for (Eigen::Index x = 0; x < image.cols(); ++x)
    for (Eigen::Index y = 0; y < image.rows(); ++y) {
      if (!mask.mask(y, x)) continue;
      r(y, x) = (1 - alpha) * image(y, x) + alpha * tint.r;
      g(y, x) = (1 - alpha) * image(y, x) + alpha * tint.g;
      b(y, x) = (1 - alpha) * image(y, x) + alpha * tint.b;
    }
  if (gt) {
    const auto [upper, lower] = extract_boundaries(*gt);
    for (const auto* curve : {&upper, &lower})
      for (Eigen::Index x = 0; x < curve->width(); ++x)
        if (const auto row = curve->rows[static_cast<std::size_t>(x)]) {
          const auto y = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::lround(*row)), 0, image.rows() - 1);
          r(y, x) = 0.1f;
          g(y, x) = 1.0f;
          b(y, x) = 0.2f;
        }
  }
  write_png_rgb(path, r, g, b);
}

void write_curve_plot(const std::filesystem::path& path, const std::vector<CurveSeries>& series,
                      const std::string& title, int width, int height) {
  Canvas c(width, height, kWhite);
  const int left = 60, right = 150, top = 24, bottom = 30;
  const int pw = width - left - right, ph = height - top - bottom;
  if (pw < 20 || ph < 20) throw std::invalid_argument("write_curve_plot: canvas too small");

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t max_len = 0;
  for (const auto& s : series) {
    max_len = std::max(max_len, s.values.size());
    for (double v : s.values)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  const double span = static_cast<double>(std::max<std::size_t>(max_len, 2) - 1);
  auto px = [&](double i) { return left + static_cast<int>(std::lround(i / span * (pw - 1))); };
  auto py = [&](double v) { return top + ph - 1 - static_cast<int>(std::lround((v - lo) / (hi - lo) * (ph - 1))); };

  for (int k = 1; k < 4; ++k) {
    const int y = top + k * ph / 4;
    c.line(left, y, left + pw - 1, y, kGrid);
  }
  c.line(left, top, left, top + ph - 1, kBlack);
  c.line(left, top + ph - 1, left + pw - 1, top + ph - 1, kBlack);
  draw_text(c, left, 8, title, kBlack);
  draw_text(c, 4, top, short_number(hi), kBlack);
  draw_text(c, 4, top + ph - 8, short_number(lo), kBlack);
  draw_text(c, left, top + ph + 8, "0", kBlack);
  const std::string last = std::to_string(max_len == 0 ? 0 : max_len - 1);
  draw_text(c, left + pw - kGlyphAdvance * static_cast<int>(last.size()), top + ph + 8, last, kBlack);
  draw_text(c, left + pw / 2 - 15, top + ph + 8, "EPOCH", kBlack);

  for (std::size_t k = 0; k < series.size(); ++k) {
    const Color col = kPalette[k % kPalette.size()];
    const auto& v = series[k].values;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (std::isfinite(v[i - 1]) && std::isfinite(v[i]))
        c.thick_line(px(static_cast<double>(i - 1)), py(v[i - 1]), px(static_cast<double>(i)), py(v[i]), col);
    if (v.size() == 1 && std::isfinite(v[0])) c.fill_rect(px(0) - 1, py(v[0]) - 1, 3, 3, col);
    const int ly = top + 4 + static_cast<int>(k) * 14;
    c.fill_rect(left + pw + 10, ly, 10, 7, col);
    draw_text(c, left + pw + 24, ly, series[k].label, kBlack);
  }
  c.save(path);
}

void write_loss_plot(const std::filesystem::path& path, const std::vector<TrainLog>& logs) {
  std::vector<CurveSeries> series;
  for (const auto& log : logs) {
    CurveSeries s{log.mode.empty() ? log.stage : log.mode, {}};
    for (const auto& r : log.records) s.values.push_back(r.loss_total);
    series.push_back(std::move(s));
  }
  write_curve_plot(path, series, "TRAINING LOSS (TOTAL)");
}

}  // namespace bionet
