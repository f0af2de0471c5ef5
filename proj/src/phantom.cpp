#include "bionet/phantom.hpp"

#include "bionet/metrics.hpp"
#include "bionet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bionet {

namespace {

constexpr double kReferenceHeight = 128.0;

/// Zero-mean, unit-variance smooth curve: cumulative Gaussian steps,
/// centered moving average of `window` columns, then standardized.
std::vector<double> smooth_walk(Rng& rng, Eigen::Index width, double window) {
  std::vector<double> walk(static_cast<std::size_t>(width));
  double acc = 0.0;
  for (auto& v : walk) {
    acc += rng.normal();
    v = acc;
  }
  const Eigen::Index half = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::lround(window / 2.0)));
  std::vector<double> prefix(walk.size() + 1, 0.0);
  for (std::size_t i = 0; i < walk.size(); ++i) prefix[i + 1] = prefix[i] + walk[i];
  std::vector<double> out(walk.size());
  for (Eigen::Index x = 0; x < width; ++x) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, x - half);
    const Eigen::Index hi = std::min<Eigen::Index>(width - 1, x + half);
    out[x] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
  }
  const double mean = std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(width);
  double var = 0.0;
  for (auto& v : out) {
    v -= mean;
    var += v * v;
  }
  const double sd = std::sqrt(var / static_cast<double>(width));
  if (sd > 1e-12)
    for (auto& v : out) v /= sd;
  return out;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

PhantomConfig PhantomConfig::full_scale(std::uint64_t seed) {
  PhantomConfig c;
  c.seed = seed;
  c.height = 992;
  c.width = 512;
  const double s = 992.0 / kReferenceHeight;
  c.boundary_smoothness = 128.0;
  c.min_band_thickness = 2.0 * s;
  c.choroid_thickness_range = {20.0 * s, 50.0 * s};
  c.csi_blur_sigma = 2.0 * s;
  return c;
}

std::vector<std::string> PhantomConfig::problems() const {
  std::vector<std::string> out;
  if (height < kMinImageSize) out.push_back("height >= 16 required (got " + std::to_string(height) + ")");
  if (width < kMinImageSize) out.push_back("width >= 16 required (got " + std::to_string(width) + ")");
  if (num_layers < 3 || num_layers > 255) out.push_back("num_layers must be in [3, 255]");
  if (choroid_class < 1 || choroid_class > num_layers - 2)
    out.push_back("choroid_class must have at least one band above and below it");
  if (!(min_band_thickness >= 1.0)) out.push_back("min_band_thickness must be >= 1");
  if (!(boundary_smoothness >= 1.0)) out.push_back("boundary_smoothness must be >= 1");
  const auto [lo, hi] = choroid_thickness_range;
  if (!(lo >= min_band_thickness && hi >= lo)) out.push_back("choroid_thickness_range must satisfy min_band <= min <= max");
  if (!(csi_blur_sigma >= 0.0)) out.push_back("csi_blur_sigma must be >= 0");
  if (!(speckle_strength >= 0.0 && speckle_strength <= 1.0)) out.push_back("speckle_strength must be in [0, 1]");
  if (out.empty()) {
    const double needed = (num_layers - 1) * min_band_thickness + hi;
    if (needed > static_cast<double>(height)) {
      std::ostringstream os;
      os << "band minima need " << needed << " rows but height is " << height;
      out.push_back(os.str());
    }
  }
  return out;
}

void PhantomConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid phantom config:";
  for (const auto& s : p) msg += " " + s + ";";
  throw std::invalid_argument(msg);
}

std::vector<float> band_intensities(int num_layers, int choroid_class) {
  static constexpr float kTwelve[] = {0.05f, 0.70f, 0.30f, 0.60f, 0.22f, 0.52f, 0.36f, 0.80f, 0.92f, 0.45f, 0.62f, 0.15f};
  std::vector<float> out(static_cast<std::size_t>(num_layers));
  if (num_layers == kDefaultNumClasses && choroid_class == kDefaultChoroidClass) {
    std::copy(std::begin(kTwelve), std::end(kTwelve), out.begin());
    return out;
  }
  // Golden-ratio spread keeps neighbouring bands apart for other layouts.
  for (int k = 0; k < num_layers; ++k) out[k] = 0.1f + 0.8f * static_cast<float>(std::fmod(0.37 + 0.618034 * k, 1.0));
  out[0] = 0.05f;
  out[choroid_class] = 0.45f;
  out[choroid_class + 1] = 0.62f;
  return out;
}

BoundaryCurve PhantomSample::choroid_upper() const {
  const int c = sample.choroid_class;
  BoundaryCurve curve;
  curve.height = sample.image.height();
  for (double v : surfaces[c - 1]) curve.rows.emplace_back(v);
  return curve;
}

BoundaryCurve PhantomSample::choroid_lower() const {
  const int c = sample.choroid_class;
  BoundaryCurve curve;
  curve.height = sample.image.height();
  for (double v : surfaces[c]) curve.rows.emplace_back(v - 1.0);
  return curve;
}

PhantomSample generate_phantom_with_surfaces(const PhantomConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Rng rng(Rng::derive(cfg.seed, index));
  const Eigen::Index h = cfg.height, w = cfg.width;
  const int L = cfg.num_layers;
  const int choroid = cfg.choroid_class;
  const double scale = static_cast<double>(h) / kReferenceHeight;
  const double min_band = cfg.min_band_thickness;
  const auto [ch_lo, ch_hi] = cfg.choroid_thickness_range;

  // Band 0 (above the retina) is the top offset; band L-1 takes the rest.
  const double top_mean = rng.uniform(10.0, 18.0) * scale;
  const double tilt = rng.uniform(-4.0, 4.0) * scale;
  const double curvature = rng.uniform(0.0, 8.0) * scale;
  std::vector<double> band_mean(static_cast<std::size_t>(L), 0.0);
  for (int k = 1; k < L - 1; ++k) {
    if (k == choroid) {
      band_mean[k] = rng.uniform(ch_lo, ch_hi);
    } else if (k < choroid) {
      band_mean[k] = std::max(min_band, rng.uniform(3.0, 6.0) * scale);
    } else {
      band_mean[k] = std::max(min_band, rng.uniform(5.0, 9.0) * scale);
    }
  }
  std::vector<std::vector<double>> walks;
  walks.reserve(static_cast<std::size_t>(L - 1));
  for (int k = 0; k < L - 1; ++k) walks.push_back(smooth_walk(rng, w, cfg.boundary_smoothness));

  const double limit = static_cast<double>(h) - min_band;
  std::vector<std::vector<double>> surfaces(static_cast<std::size_t>(L - 1), std::vector<double>(w));
  std::vector<double> t(static_cast<std::size_t>(L));
  for (Eigen::Index x = 0; x < w; ++x) {
    const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 0.5;
    t[0] = std::max(min_band, top_mean + tilt * 2.0 * u + curvature * (4.0 * u * u - 1.0 / 3.0) + 2.0 * scale * walks[0][x]);
    for (int k = 1; k < L - 1; ++k) {
      const double v = band_mean[k] * (1.0 + 0.15 * walks[k][x]);
      t[k] = (k == choroid) ? std::clamp(v, ch_lo, ch_hi) : std::max(min_band, v);
    }
    // Squeeze the top offset, then the non-choroid bands, if the stack overflows.
    double total = std::accumulate(t.begin(), t.end() - 1, 0.0);
    if (total > limit) {
      const double cut = std::min(total - limit, t[0] - min_band);
      t[0] -= cut;
      total -= cut;
    }
    if (total > limit) {
      double slack = 0.0;
      for (int k = 1; k < L - 1; ++k)
        if (k != choroid) slack += t[k] - min_band;
      const double f = slack > 0.0 ? std::min(1.0, (total - limit) / slack) : 0.0;
      for (int k = 1; k < L - 1; ++k)
        if (k != choroid) t[k] -= f * (t[k] - min_band);
    }
    double acc = 0.0;
    for (int j = 0; j < L - 1; ++j) {
      acc += t[j];
      surfaces[j][x] = acc;
    }
  }

  LayerLabelMap layers;
  layers.num_classes = L;
  layers.labels = LabelGrid::Zero(h, w);
  std::vector<Eigen::Index> rounded(static_cast<std::size_t>(L - 1));
  for (Eigen::Index x = 0; x < w; ++x) {
    for (int j = 0; j < L - 1; ++j) rounded[j] = static_cast<Eigen::Index>(std::floor(surfaces[j][x] + 0.5));
    int cls = 0;
    for (Eigen::Index y = 0; y < h; ++y) {
      while (cls < L - 1 && y >= rounded[cls]) ++cls;
      layers.labels(y, x) = static_cast<std::uint8_t>(cls);
    }
  }

  const auto means = band_intensities(L, choroid);
  ImageGrid img(h, w);
  const double sigma = cfg.csi_blur_sigma;
  for (Eigen::Index x = 0; x < w; ++x) {
    const double csi = surfaces[choroid][x];
    for (Eigen::Index y = 0; y < h; ++y) {
      const int cls = layers.labels(y, x);
      double v = means[cls];
      if (sigma > 0.0 && (cls == choroid || cls == choroid + 1)) {
        const double z = (static_cast<double>(y) + 0.5 - csi) / sigma;
        if (std::abs(z) < 6.0) v = means[choroid] + (means[choroid + 1] - means[choroid]) * normal_cdf(z);
      }
      img(y, x) = static_cast<float>(v);
    }
  }
  if (cfg.speckle_strength > 0.0) {
    for (Eigen::Index x = 0; x < w; ++x)
      for (Eigen::Index y = 0; y < h; ++y) {
        const double v = img(y, x) * (1.0 + cfg.speckle_strength * rng.normal());
        img(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  }

  char id[32];
  std::snprintf(id, sizeof id, "phantom_%05llu", static_cast<unsigned long long>(index));
  PhantomSample out;
  out.sample = make_sample(id, BScan{std::move(img)}, std::move(layers), choroid);
  out.surfaces = std::move(surfaces);
  return out;
}

Sample generate_phantom(const PhantomConfig& config, std::uint64_t index) {
  return generate_phantom_with_surfaces(config, index).sample;
}

}  // namespace bionet
