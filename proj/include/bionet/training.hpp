#pragma once

#include "bionet/adam.hpp"
#include "bionet/domain.hpp"
#include "bionet/losses.hpp"
#include "bionet/metrics.hpp"
#include "bionet/networks.hpp"
#include "bionet/rng.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bionet {

/// Ablation rows: which networks exist and which loss terms are active.
///   unet      U_C on the raw image, choroid BCE only
///   gms       U_G alone, multi-layer CE; choroid read off its class channel
///   unet_gms  full cascade without the biomarker term
///   unet_bio  U_C on the raw image, choroid BCE + biomarker term
///   bionet    full cascade, all three terms
enum class AblationMode { unet, gms, unet_gms, unet_bio, bionet };

inline constexpr std::array<AblationMode, 5> kAllModes{AblationMode::unet, AblationMode::gms, AblationMode::unet_gms,
                                                       AblationMode::unet_bio, AblationMode::bionet};

std::string to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& s);
bool uses_global(AblationMode mode);
bool uses_local(AblationMode mode);
bool uses_bio(AblationMode mode);

/// Target compared with B(C_pred): the ground-truth thickness, or B applied
/// to the ground-truth mask.
enum class BioTarget { ground_truth, bio_of_ground_truth };
/// Joint: U_G and U_C optimized together from the first epoch. Sequential:
/// U_G alone for `warmup_epochs`, then joint.
enum class Stage2Schedule { joint, sequential };
/// Whether lr_decay_epochs counts epochs or optimizer steps.
enum class ScheduleUnit { epochs, steps };

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  double max_rotation_deg = 10.0;
};

struct TrainConfig {
  int epochs = 300;
  int batch_size = 4;
  double base_lr = 0.01;
  std::vector<int> lr_decay_epochs{40, 80, 160, 240};
  double lr_decay_factor = 0.1;
  ScheduleUnit lr_schedule_unit = ScheduleUnit::epochs;
  AdamOptions adam;
  std::uint64_t seed = 0;
  AugmentConfig augmentation;
  AblationMode ablation_mode = AblationMode::bionet;

  Index base_width = 64;
  Index depth = 4;
  Index bio_head_width = 64;
  Index norm_groups = 8;

  LossWeights weights;
  CrossEntropyForm ce_form = CrossEntropyForm::categorical;
  BioTarget bio_target = BioTarget::ground_truth;
  Stage2Schedule stage2_schedule = Stage2Schedule::joint;
  int warmup_epochs = 0;

  /// Stage 1 input corruption: Gaussian blur of the mask with this
  /// probability, sigma uniform in [0.5, bio_blur_sigma_max].
  double bio_blur_prob = 0.5;
  double bio_blur_sigma_max = 2.0;

  /// Evaluate on the validation split every this many epochs (and always
  /// after the last one); 0 evaluates only after the last epoch.
  int eval_every = 1;

  void validate() const;
};

/// Learning rate after `count` epochs (or steps): base * factor^k, k being
/// the number of decay points <= count.
double lr_at(int count, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss_multilayers = 0.0;
  double loss_choroid = 0.0;
  double loss_bio = 0.0;
  double loss_total = 0.0;
  std::optional<MetricsReport> validation;
  std::optional<double> validation_mae;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::string stage;
  std::string mode;
  std::vector<EpochRecord> records;

  static constexpr const char* kCsvHeader =
      "epoch,lr,loss_multilayers,loss_choroid,loss_bio,loss_total,val_dice,val_iou,val_ausde_upper,"
      "val_ausde_lower,val_ausde_mean,val_accuracy,val_sensitivity,val_mae,wall_seconds";

  std::string to_csv() const;
  /// CSV without the wall-time column; equal for deterministic reruns.
  std::string to_csv_without_timing() const;
  std::string summary_json() const;
  void save(const std::filesystem::path& dir, const std::string& basename) const;
  static TrainLog load_csv(const std::filesystem::path& path);
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FreezeViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Augmentation

struct AugmentDraw {
  bool flip = false;
  double angle_deg = 0.0;
};

AugmentDraw draw_augmentation(Rng& rng, const AugmentConfig& config);
Sample flip_sample(const Sample& sample);
/// Rotation about the image center; labels use nearest-neighbour
/// resampling, the image bilinear, both with border replication. The mask
/// and thickness are re-derived from the rotated labels.
Sample rotate_sample(const Sample& sample, double angle_deg);
Sample apply_augmentation(const Sample& sample, const AugmentDraw& draw);
Sample augment(const Sample& sample, Rng& rng, const AugmentConfig& config);

/// Separable Gaussian blur with border replication.
ImageGrid gaussian_blur(const ImageGrid& image, double sigma);

// Batching

Tensor<float> image_batch(const std::vector<const Sample*>& samples);
Tensor<float> grid_batch(const std::vector<const ImageGrid*>& grids);
ImageGrid plane_to_grid(const Tensor<float>& t, Index n, Index c);
/// Zero-pads H and W up to a multiple of `multiple` (bottom/right).
Tensor<float> pad_to_multiple(const Tensor<float>& t, Index multiple);
Tensor<float> crop(const Tensor<float>& t, Index height, Index width);
/// Adjoint of crop: embeds `t` at the top-left of a zero tensor.
Tensor<float> uncrop(const Tensor<float>& t, Index height, Index width);

// Stage 1

struct BioStageResult {
  std::unique_ptr<BioRegressor<float>> network;
  TrainLog log;
  double validation_mae = 0.0;
};

/// Trains B on (ground-truth mask -> thickness) pairs with the MAE loss and
/// returns it frozen.
BioStageResult train_bio_stage(const std::vector<Sample>& train, const std::vector<Sample>& validation,
                               const TrainConfig& config);

/// Mean |B(mask) - thickness| over the samples.
double bio_validation_mae(BioRegressor<float>& bio, const std::vector<Sample>& samples, int batch_size = 8);

// Stage 2

/// The trained networks of one ablation mode.
struct ModelBundle {
  static constexpr int kSchemaVersion = 1;

  AblationMode mode = AblationMode::bionet;
  int num_classes = kDefaultNumClasses;
  int choroid_class = kDefaultChoroidClass;
  std::unique_ptr<UNet<float>> global;
  std::unique_ptr<UNet<float>> local;

  /// Fresh, untrained networks for `mode`.
  static ModelBundle create(AblationMode mode, const TrainConfig& config, int num_classes, int choroid_class);

  Index size_multiple() const;
  /// N x 1 x H x W images -> N x 1 x H x W choroid probabilities. Pads to
  /// the network multiple internally and crops back.
  Tensor<float> predict_choroid_prob(const Tensor<float>& images);
  std::vector<ChoroidMask> predict_masks(const std::vector<Sample>& samples, int batch_size = 4);
  std::vector<ImageGrid> predict_probabilities(const std::vector<Sample>& samples, int batch_size = 4);

  /// Writes model.json plus global.ckpt / local.ckpt into `dir`.
  void save(const std::filesystem::path& dir) const;
  static ModelBundle load(const std::filesystem::path& dir);
};

struct CascadeStageResult {
  ModelBundle model;
  TrainLog log;
};

/// Trains the networks of config.ablation_mode. frozen_bio is required (and
/// must be frozen) for modes with the biomarker term; its digest is checked
/// after every epoch.
CascadeStageResult train_cascade_stage(const std::vector<Sample>& train, const std::vector<Sample>& validation,
                                       BioRegressor<float>* frozen_bio, const TrainConfig& config);

using Predictor = std::function<ChoroidMask(const Sample&)>;

MetricsReport evaluate_predictor(const Predictor& predictor, const std::vector<Sample>& samples);
/// Inference, 0.5 threshold, then evaluate_dataset.
MetricsReport evaluate_model(ModelBundle& model, const std::vector<Sample>& samples);

}  // namespace bionet
