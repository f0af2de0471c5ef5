#include "bionet/training.hpp"

#include "bionet/checkpoint.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace bionet {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::unet: return "unet";
    case AblationMode::gms: return "gms";
    case AblationMode::unet_gms: return "unet+gms";
    case AblationMode::unet_bio: return "unet+bio";
    case AblationMode::bionet: return "bionet";
  }
  return "bionet";
}

AblationMode ablation_mode_from_string(const std::string& s) {
  for (auto m : kAllModes)
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown ablation mode '" + s + "' (expected unet, gms, unet+gms, unet+bio or bionet)");
}

bool uses_global(AblationMode m) {
  return m == AblationMode::gms || m == AblationMode::unet_gms || m == AblationMode::bionet;
}
bool uses_local(AblationMode m) { return m != AblationMode::gms; }
bool uses_bio(AblationMode m) { return m == AblationMode::unet_bio || m == AblationMode::bionet; }

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw std::invalid_argument("TrainConfig: base_lr must be > 0");
  for (std::size_t i = 1; i < lr_decay_epochs.size(); ++i)
    if (lr_decay_epochs[i] <= lr_decay_epochs[i - 1])
      throw std::invalid_argument("TrainConfig: lr_decay_epochs must be strictly increasing");
  if (!(lr_decay_factor > 0.0)) throw std::invalid_argument("TrainConfig: lr_decay_factor must be > 0");
  if (!(augmentation.flip_prob >= 0.0 && augmentation.flip_prob <= 1.0))
    throw std::invalid_argument("TrainConfig: flip_prob must be in [0, 1]");
  if (!(augmentation.max_rotation_deg >= 0.0)) throw std::invalid_argument("TrainConfig: max_rotation_deg must be >= 0");
  if (!(bio_blur_prob >= 0.0 && bio_blur_prob <= 1.0)) throw std::invalid_argument("TrainConfig: bio_blur_prob must be in [0, 1]");
  if (!(bio_blur_sigma_max >= 0.5)) throw std::invalid_argument("TrainConfig: bio_blur_sigma_max must be >= 0.5");
  if (warmup_epochs < 0) throw std::invalid_argument("TrainConfig: warmup_epochs must be >= 0");
  if (eval_every < 0) throw std::invalid_argument("TrainConfig: eval_every must be >= 0");
  weights.validate();
}

double lr_at(int count, const TrainConfig& config) {
  if (count < 0) throw std::invalid_argument("lr_at: negative epoch");
  int decays = 0;
  for (int e : config.lr_decay_epochs) decays += (e <= count) ? 1 : 0;
  return config.base_lr * std::pow(config.lr_decay_factor, decays);
}

// ---------------------------------------------------------------------------
// Train log

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string record_row(const EpochRecord& r, bool with_timing) {
  std::ostringstream os;
  os << r.epoch << ',' << fmt(r.lr) << ',' << fmt(r.loss_multilayers) << ',' << fmt(r.loss_choroid) << ','
     << fmt(r.loss_bio) << ',' << fmt(r.loss_total);
  if (r.validation) {
    const auto& v = *r.validation;
    os << ',' << fmt(v.dice) << ',' << fmt(v.iou) << ',' << fmt(v.ausde_upper) << ',' << fmt(v.ausde_lower) << ','
       << fmt(v.ausde_mean) << ',' << fmt(v.accuracy) << ',' << fmt(v.sensitivity);
  } else {
    os << ",,,,,,,";
  }
  os << ',' << (r.validation_mae ? fmt(*r.validation_mae) : std::string());
  if (with_timing) os << ',' << fmt(r.wall_seconds);
  return os.str();
}

}  // namespace

std::string TrainLog::to_csv() const {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) out += record_row(r, true) + "\n";
  return out;
}

std::string TrainLog::to_csv_without_timing() const {
  std::string header = kCsvHeader;
  header = header.substr(0, header.rfind(','));
  std::string out = "# stage=" + stage + " mode=" + mode + "\n" + header + "\n";
  for (const auto& r : records) out += record_row(r, false) + "\n";
  return out;
}

std::string TrainLog::summary_json() const {
  json j = {{"stage", stage}, {"mode", mode}, {"epochs", records.size()}};
  if (!records.empty()) {
    const auto& last = records.back();
    j["final_loss_total"] = last.loss_total;
    j["final_lr"] = last.lr;
    if (last.validation) j["final_validation"] = json::parse(metrics_json(*last.validation));
    if (last.validation_mae) j["final_validation_mae"] = *last.validation_mae;
    double wall = 0.0;
    for (const auto& r : records) wall += r.wall_seconds;
    j["wall_seconds"] = wall;
  }
  return j.dump(2) + "\n";
}

void TrainLog::save(const std::filesystem::path& dir, const std::string& basename) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / (basename + ".csv")) << to_csv();
  std::ofstream(dir / (basename + "_summary.json")) << summary_json();
}

TrainLog TrainLog::load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read train log '" + path.string() + "'");
  TrainLog log;
  std::string line;
  std::getline(is, line);
  auto num = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() < 15) throw std::runtime_error("malformed train log row in '" + path.string() + "'");
    EpochRecord r;
    r.epoch = std::stoi(f[0]);
    r.lr = std::stod(f[1]);
    r.loss_multilayers = std::stod(f[2]);
    r.loss_choroid = std::stod(f[3]);
    r.loss_bio = std::stod(f[4]);
    r.loss_total = std::stod(f[5]);
    if (!f[6].empty()) {
      MetricsReport m;
      m.dice = *num(f[6]);
      m.iou = *num(f[7]);
      m.ausde_upper = *num(f[8]);
      m.ausde_lower = *num(f[9]);
      m.ausde_mean = *num(f[10]);
      m.accuracy = *num(f[11]);
      m.sensitivity = *num(f[12]);
      r.validation = m;
    }
    r.validation_mae = num(f[13]);
    r.wall_seconds = num(f[14]).value_or(0.0);
    log.records.push_back(r);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentDraw draw_augmentation(Rng& rng, const AugmentConfig& config) {
  AugmentDraw d;
  // Both draws are always consumed so the stream does not depend on flags.
  const bool flip = rng.bernoulli(config.flip_prob);
  const double angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  if (config.enabled) {
    d.flip = flip;
    d.angle_deg = angle;
  }
  return d;
}

Sample flip_sample(const Sample& s) {
  Sample out = s;
  out.image.pixels = s.image.pixels.rowwise().reverse();
  out.layers.labels = s.layers.labels.rowwise().reverse();
  out.choroid.mask = s.choroid.mask.rowwise().reverse();
  out.thickness = thickness_of(out.choroid);
  return out;
}

Sample rotate_sample(const Sample& s, double angle_deg) {
  if (angle_deg == 0.0) return s;
  const Index h = s.image.height(), w = s.image.width();
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), sn = std::sin(theta);
  const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
  ImageGrid img(h, w);
  LayerLabelMap layers;
  layers.num_classes = s.layers.num_classes;
  layers.labels.resize(h, w);
  auto clampi = [](double v, Index hi) { return std::clamp<Index>(static_cast<Index>(std::floor(v)), 0, hi); };
  for (Index x = 0; x < w; ++x) {
    for (Index y = 0; y < h; ++y) {
      // Inverse map: output pixel -> source coordinate.
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = std::clamp(c * dx + sn * dy + cx, 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(-sn * dx + c * dy + cy, 0.0, static_cast<double>(h - 1));
      layers.labels(y, x) = s.layers.labels(clampi(sy + 0.5, h - 1), clampi(sx + 0.5, w - 1));
      const Index x0 = clampi(sx, w - 1), y0 = clampi(sy, h - 1);
      const Index x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      const double top = (1 - fx) * s.image.pixels(y0, x0) + fx * s.image.pixels(y0, x1);
      const double bottom = (1 - fx) * s.image.pixels(y1, x0) + fx * s.image.pixels(y1, x1);
      img(y, x) = static_cast<float>(std::clamp((1 - fy) * top + fy * bottom, 0.0, 1.0));
    }
  }
  return make_sample(s.id, BScan{std::move(img)}, std::move(layers), s.choroid_class);
}

Sample apply_augmentation(const Sample& s, const AugmentDraw& d) {
  Sample out = d.flip ? flip_sample(s) : s;
  return rotate_sample(out, d.angle_deg);
}

Sample augment(const Sample& s, Rng& rng, const AugmentConfig& config) {
  return apply_augmentation(s, draw_augmentation(rng, config));
}

ImageGrid gaussian_blur(const ImageGrid& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  const Index h = image.rows(), w = image.cols();
  ImageGrid tmp(h, w), out(h, w);
  for (Index x = 0; x < w; ++x)
    for (Index y = 0; y < h; ++y) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * image(std::clamp<Index>(y + i, 0, h - 1), x);
      tmp(y, x) = static_cast<float>(acc);
    }
  for (Index x = 0; x < w; ++x)
    for (Index y = 0; y < h; ++y) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(y, std::clamp<Index>(x + i, 0, w - 1));
      out(y, x) = static_cast<float>(acc);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

Tensor<float> grid_batch(const std::vector<const ImageGrid*>& grids) {
  if (grids.empty()) throw std::invalid_argument("grid_batch: empty batch");
  const Index h = grids.front()->rows(), w = grids.front()->cols();
  Tensor<float> t(static_cast<Index>(grids.size()), 1, h, w);
  for (std::size_t n = 0; n < grids.size(); ++n) {
    if (grids[n]->rows() != h || grids[n]->cols() != w) throw std::invalid_argument("grid_batch: size mismatch");
    t.plane(static_cast<Index>(n), 0) = grids[n]->matrix();
  }
  return t;
}

Tensor<float> image_batch(const std::vector<const Sample*>& samples) {
  std::vector<const ImageGrid*> grids;
  for (const auto* s : samples) grids.push_back(&s->image.pixels);
  return grid_batch(grids);
}

ImageGrid plane_to_grid(const Tensor<float>& t, Index n, Index c) { return t.plane(n, c).array(); }

Tensor<float> pad_to_multiple(const Tensor<float>& t, Index multiple) {
  const Index h = (t.height() + multiple - 1) / multiple * multiple;
  const Index w = (t.width() + multiple - 1) / multiple * multiple;
  if (h == t.height() && w == t.width()) return t;
  return uncrop(t, h, w);
}

Tensor<float> crop(const Tensor<float>& t, Index height, Index width) {
  if (height == t.height() && width == t.width()) return t;
  Tensor<float> out(t.batch(), t.channels(), height, width);
  for (Index n = 0; n < t.batch(); ++n)
    for (Index c = 0; c < t.channels(); ++c) out.plane(n, c) = t.plane(n, c).topLeftCorner(height, width);
  return out;
}

Tensor<float> uncrop(const Tensor<float>& t, Index height, Index width) {
  if (height == t.height() && width == t.width()) return t;
  Tensor<float> out(t.batch(), t.channels(), height, width);
  for (Index n = 0; n < t.batch(); ++n)
    for (Index c = 0; c < t.channels(); ++c) out.plane(n, c).topLeftCorner(t.height(), t.width()) = t.plane(n, c);
  return out;
}

namespace {

void check_finite_loss(double value, const std::string& stage, int epoch, std::size_t batch) {
  if (!std::isfinite(value))
    throw TrainingDiverged(stage + ": non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch) + "; lower base_lr or check the input data");
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(Rng::derive(seed, stream));
  rng.shuffle(order);
  return order;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool should_evaluate(const TrainConfig& c, int epoch) {
  if (epoch == c.epochs - 1) return true;
  return c.eval_every > 0 && (epoch + 1) % c.eval_every == 0;
}

int lr_counter(const TrainConfig& c, int epoch, long steps) {
  return c.lr_schedule_unit == ScheduleUnit::epochs ? epoch : static_cast<int>(steps);
}

constexpr std::uint64_t kStreamOrder = 0x6f72646572ULL;
constexpr std::uint64_t kStreamAugment = 0x6175676dULL;
constexpr std::uint64_t kStreamBlur = 0x626c7572ULL;

}  // namespace

// ---------------------------------------------------------------------------
// Stage 1

double bio_validation_mae(BioRegressor<float>& bio, const std::vector<Sample>& samples, int batch_size) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<ImageGrid> masks;
    for (std::size_t i = start; i < end; ++i) masks.push_back(samples[i].choroid.mask.cast<float>());
    std::vector<const ImageGrid*> ptrs;
    for (const auto& m : masks) ptrs.push_back(&m);
    const auto pred = bio.forward(grid_batch(ptrs));
    for (std::size_t i = start; i < end; ++i)
      total += std::abs(static_cast<double>(pred[static_cast<Index>(i - start)]) - samples[i].thickness.value);
  }
  return total / static_cast<double>(samples.size());
}

BioStageResult train_bio_stage(const std::vector<Sample>& train, const std::vector<Sample>& validation,
                               const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train_bio_stage: empty training set");
  BioStageResult result;
  result.network = std::make_unique<BioRegressor<float>>(
      bio_config(config.base_width, config.bio_head_width, Rng::derive(config.seed, 0x62696f)));
  auto& bio = *result.network;
  Adam<float> adam(bio.parameters(), config.adam);
  result.log.stage = "bio";
  result.log.mode = "bio";
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = shuffled(train.size(), config.seed, kStreamOrder + 7919ULL * static_cast<std::uint64_t>(epoch));
    Rng aug_rng(Rng::derive(config.seed, kStreamAugment + 7919ULL * static_cast<std::uint64_t>(epoch)));
    Rng blur_rng(Rng::derive(config.seed, kStreamBlur + 7919ULL * static_cast<std::uint64_t>(epoch)));
    const double lr = lr_at(lr_counter(config, epoch, adam.steps()), config);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<ImageGrid> inputs;
      Vector<float> targets(static_cast<Index>(end - start));
      for (std::size_t i = start; i < end; ++i) {
        const Sample s = augment(train[order[i]], aug_rng, config.augmentation);
        const bool blur = blur_rng.bernoulli(config.bio_blur_prob);
        const double sigma = blur_rng.uniform(0.5, config.bio_blur_sigma_max);
        ImageGrid m = s.choroid.mask.cast<float>();
        inputs.push_back(blur ? gaussian_blur(m, sigma) : m);
        targets[static_cast<Index>(i - start)] = static_cast<float>(s.thickness.value);
      }
      std::vector<const ImageGrid*> ptrs;
      for (const auto& m : inputs) ptrs.push_back(&m);
      const Tensor<float> x = grid_batch(ptrs);
      const double cur_lr = lr_at(lr_counter(config, epoch, adam.steps()), config);
      adam.zero_grad();
      const auto pred = bio.forward(x);
      const auto loss = bio_mae_loss<float>(pred, targets);
      check_finite_loss(loss.value, "bio stage", epoch, batches);
      bio.backward(loss.grad);
      adam.step(cur_lr);
      loss_sum += loss.value;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss_bio = loss_sum / static_cast<double>(batches);
    rec.loss_total = rec.loss_bio;
    if (!validation.empty() && should_evaluate(config, epoch))
      rec.validation_mae = bio_validation_mae(bio, validation, config.batch_size);
    rec.wall_seconds = seconds_since(t0);
    result.log.records.push_back(rec);
  }
  bio.freeze();
  result.validation_mae = validation.empty() ? 0.0 : bio_validation_mae(bio, validation, config.batch_size);
  return result;
}

// ---------------------------------------------------------------------------
// Stage 2

ModelBundle ModelBundle::create(AblationMode mode, const TrainConfig& config, int num_classes, int choroid_class) {
  ModelBundle b;
  b.mode = mode;
  b.num_classes = num_classes;
  b.choroid_class = choroid_class;
  if (choroid_class < 0 || choroid_class >= num_classes)
    throw std::invalid_argument("ModelBundle: choroid class outside [0, num_classes)");
  if (uses_global(mode)) {
    auto c = global_config(config.base_width, config.depth, num_classes, Rng::derive(config.seed, 0x676c6f62));
    c.norm_groups = config.norm_groups;
    b.global = std::make_unique<UNet<float>>(c);
  }
  if (uses_local(mode)) {
    const Index in = uses_global(mode) ? 1 + num_classes : 1;
    auto c = local_config(config.base_width, config.depth, in, Rng::derive(config.seed, 0x6c6f63));
    c.norm_groups = config.norm_groups;
    b.local = std::make_unique<UNet<float>>(c);
  }
  return b;
}

Index ModelBundle::size_multiple() const {
  Index m = 1;
  if (global) m = std::max(m, global->config().size_multiple());
  if (local) m = std::max(m, local->config().size_multiple());
  return m;
}

Tensor<float> ModelBundle::predict_choroid_prob(const Tensor<float>& images) {
  const Tensor<float> x = pad_to_multiple(images, size_multiple());
  Tensor<float> prob;
  switch (mode) {
    case AblationMode::unet:
    case AblationMode::unet_bio: prob = local->predict(x); break;
    case AblationMode::gms: prob = slice_channels(global->predict(x), choroid_class, 1); break;
    case AblationMode::unet_gms:
    case AblationMode::bionet: prob = cascade_forward(x, *global, *local).choroid_prob; break;
  }
  return crop(prob, images.height(), images.width());
}

std::vector<ImageGrid> ModelBundle::predict_probabilities(const std::vector<Sample>& samples, int batch_size) {
  std::vector<ImageGrid> out;
  const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    const std::size_t end = std::min(samples.size(), start + bs);
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    const Tensor<float> prob = predict_choroid_prob(image_batch(batch));
    for (Index n = 0; n < prob.batch(); ++n) out.push_back(plane_to_grid(prob, n, 0));
  }
  return out;
}

std::vector<ChoroidMask> ModelBundle::predict_masks(const std::vector<Sample>& samples, int batch_size) {
  std::vector<ChoroidMask> out;
  for (const auto& p : predict_probabilities(samples, batch_size)) out.push_back(binarize(p));
  return out;
}

void ModelBundle::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json j = {{"format", "bionet-model"},
            {"schema_version", kSchemaVersion},
            {"mode", to_string(mode)},
            {"num_classes", num_classes},
            {"choroid_class", choroid_class}};
  if (global) {
    save_checkpoint(dir / "global.ckpt", *global, NetworkKind::unet, "stage2:" + to_string(mode));
    j["global"] = "global.ckpt";
  }
  if (local) {
    save_checkpoint(dir / "local.ckpt", *local, NetworkKind::unet, "stage2:" + to_string(mode));
    j["local"] = "local.ckpt";
  }
  std::ofstream os(dir / "model.json");
  os << j.dump(2) << "\n";
  if (!os) throw std::runtime_error("cannot write '" + (dir / "model.json").string() + "'");
}

ModelBundle ModelBundle::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "model.json");
  if (!is) throw std::runtime_error("cannot read model bundle '" + (dir / "model.json").string() + "'");
  const json j = json::parse(is);
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    throw std::runtime_error("model bundle '" + dir.string() + "' has an unsupported schema version");
  ModelBundle b;
  b.mode = ablation_mode_from_string(j.at("mode").get<std::string>());
  b.num_classes = j.at("num_classes").get<int>();
  b.choroid_class = j.at("choroid_class").get<int>();
  if (j.contains("global")) b.global = load_unet(dir / j.at("global").get<std::string>());
  if (j.contains("local")) b.local = load_unet(dir / j.at("local").get<std::string>());
  if (uses_global(b.mode) != static_cast<bool>(b.global) || uses_local(b.mode) != static_cast<bool>(b.local))
    throw std::runtime_error("model bundle '" + dir.string() + "' is missing networks for mode " + to_string(b.mode));
  return b;
}

CascadeStageResult train_cascade_stage(const std::vector<Sample>& train, const std::vector<Sample>& validation,
                                       BioRegressor<float>* frozen_bio, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train_cascade_stage: empty training set");
  const AblationMode mode = config.ablation_mode;
  const bool with_bio = uses_bio(mode);
  if (with_bio) {
    if (frozen_bio == nullptr) throw std::invalid_argument("mode " + to_string(mode) + " requires a biomarker network");
    if (!frozen_bio->is_frozen())
      throw FreezeViolation("mode " + to_string(mode) + " requires a frozen biomarker network");
  }
  const int num_classes = train.front().layers.num_classes;
  const int choroid_class = train.front().choroid_class;

  CascadeStageResult result{ModelBundle::create(mode, config, num_classes, choroid_class), {}};
  ModelBundle& model = result.model;
  result.log.stage = "cascade";
  result.log.mode = to_string(mode);

  ParameterList<float> params;
  if (model.global)
    for (auto* p : model.global->parameters()) params.push_back(p);
  if (model.local)
    for (auto* p : model.local->parameters()) params.push_back(p);
  Adam<float> adam(params, config.adam);
  const Index multiple = model.size_multiple();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const auto& w = config.weights;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = shuffled(train.size(), config.seed, kStreamOrder + 7919ULL * static_cast<std::uint64_t>(epoch));
    Rng aug_rng(Rng::derive(config.seed, kStreamAugment + 7919ULL * static_cast<std::uint64_t>(epoch)));
    const bool warmup = config.stage2_schedule == Stage2Schedule::sequential && epoch < config.warmup_epochs &&
                        model.global && model.local;
    const double lr = lr_at(lr_counter(config, epoch, adam.steps()), config);
    double sum_ml = 0.0, sum_ch = 0.0, sum_bio = 0.0, sum_total = 0.0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<Sample> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(augment(train[order[i]], aug_rng, config.augmentation));
      std::vector<const Sample*> sp;
      std::vector<const LayerLabelMap*> lp;
      std::vector<const ChoroidMask*> mp;
      for (const auto& s : batch) {
        sp.push_back(&s);
        lp.push_back(&s.layers);
        mp.push_back(&s.choroid);
      }
      const Tensor<float> images = image_batch(sp);
      const Index h = images.height(), wd = images.width();
      const Tensor<float> x = pad_to_multiple(images, multiple);
      const Index ph = x.height(), pw = x.width();

      double l_ml = 0.0, l_ch = 0.0, l_bio = 0.0;
      Tensor<float> dglobal, dlocal;
      Tensor<float> global_probs, choroid_prob;
      std::unique_ptr<Cascade<float>> cascade;

      adam.zero_grad();
      // Forward.
      if (model.global && model.local && !warmup) {
        cascade = std::make_unique<Cascade<float>>(*model.global, *model.local);
        const auto out = cascade->forward(x);
        global_probs = crop(out.global_probs, h, wd);
        choroid_prob = crop(out.choroid_prob, h, wd);
      } else if (model.global) {
        global_probs = crop(model.global->predict(x), h, wd);
      } else {
        choroid_prob = crop(model.local->predict(x), h, wd);
      }

      // Multi-layer term.
      if (!global_probs.empty()) {
        const LabelBatch labels = label_batch(lp);
        if (config.ce_form == CrossEntropyForm::categorical) {
          l_ml = multilayer_ce_loss(global_probs, labels).value;
          dglobal = softmax_ce_logit_grad(global_probs, labels);
        } else {
          const auto ce = multilayer_ce_loss(global_probs, labels, config.ce_form);
          l_ml = ce.value;
          dglobal = softmax_channels_backward(global_probs, ce.grad);
        }
        dglobal.values() *= static_cast<float>(w.w_multilayers);
      }
      // Choroid term (for gms it is only monitored, never back-propagated).
      const Tensor<float> target = mask_batch<float>(mp);
      if (mode == AblationMode::gms) {
        l_ch = choroid_bce_loss(slice_channels(global_probs, choroid_class, 1), target).value;
      } else if (!choroid_prob.empty()) {
        l_ch = choroid_bce_loss(choroid_prob, target).value;
        dlocal = sigmoid_bce_logit_grad(choroid_prob, target);
        dlocal.values() *= static_cast<float>(w.w_choroid);
        if (with_bio) {
          Vector<float> bio_target(static_cast<Index>(batch.size()));
          if (config.bio_target == BioTarget::ground_truth) {
            for (std::size_t i = 0; i < batch.size(); ++i)
              bio_target[static_cast<Index>(i)] = static_cast<float>(batch[i].thickness.value);
          } else {
            bio_target = frozen_bio->forward(target);
          }
          const auto reg = bio_regularizer_loss(choroid_prob, bio_target, *frozen_bio);
          l_bio = reg.value;
          Tensor<float> dprob = reg.grad;
          dprob.values() *= static_cast<float>(w.w_bio);
          dlocal.values() += sigmoid_backward(choroid_prob, dprob).values();
        }
      }

      const double total = mode == AblationMode::gms ? w.w_multilayers * l_ml
                                                     : total_loss(warmup ? l_ml : (model.global ? l_ml : 0.0), l_ch,
                                                                  l_bio, w);
      check_finite_loss(total, "cascade stage (" + to_string(mode) + ")", epoch, batches);

      // Backward.
      if (cascade) {
        cascade->backward(uncrop(dglobal, ph, pw), uncrop(dlocal, ph, pw));
      } else if (model.global && (warmup || !model.local)) {
        model.global->backward(uncrop(dglobal, ph, pw));
      } else {
        model.local->backward(uncrop(dlocal, ph, pw));
      }
      adam.step(lr_at(lr_counter(config, epoch, adam.steps()), config));

      sum_ml += l_ml;
      sum_ch += l_ch;
      sum_bio += l_bio;
      sum_total += total;
      ++batches;
    }

    if (with_bio && frozen_bio->digest() != frozen_bio->frozen_digest())
      throw FreezeViolation("biomarker network parameters changed during epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    const double nb = static_cast<double>(batches);
    rec.loss_multilayers = sum_ml / nb;
    rec.loss_choroid = sum_ch / nb;
    rec.loss_bio = sum_bio / nb;
    rec.loss_total = sum_total / nb;
    if (!validation.empty() && should_evaluate(config, epoch)) rec.validation = evaluate_model(model, validation);
    rec.wall_seconds = seconds_since(t0);
    result.log.records.push_back(rec);
  }
  return result;
}

MetricsReport evaluate_predictor(const Predictor& predictor, const std::vector<Sample>& samples) {
  std::vector<ChoroidMask> preds, gts;
  for (const auto& s : samples) {
    preds.push_back(predictor(s));
    gts.push_back(s.choroid);
  }
  return evaluate_dataset(preds, gts);
}

MetricsReport evaluate_model(ModelBundle& model, const std::vector<Sample>& samples) {
  std::vector<ChoroidMask> gts;
  for (const auto& s : samples) gts.push_back(s.choroid);
  return evaluate_dataset(model.predict_masks(samples), gts);
}

}  // namespace bionet
