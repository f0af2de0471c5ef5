#include "bionet/checkpoint.hpp"
#include "bionet/config_file.hpp"
#include "bionet/dataset_io.hpp"
#include "bionet/phantom.hpp"
#include "bionet/report.hpp"
#include "bionet/training.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace bionet;

namespace {

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void configure_determinism() {
  if (const char* v = std::getenv("BIONET_DETERMINISTIC"); v && std::string(v) != "0") Eigen::setNbThreads(1);
}

DatasetReader open_dataset(const fs::path& data) {
  if (!fs::exists(data)) throw CliError("data path '" + data.string() + "' does not exist");
  return DatasetReader(data);
}

TrainConfig resolve_config(const std::string& config_path, std::optional<std::uint64_t> seed,
                           std::optional<int> epochs) {
  TrainConfig c = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
  if (seed) c.seed = *seed;
  if (epochs) c.epochs = *epochs;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << text;
  if (!os) throw CliError("cannot write '" + path.string() + "'");
}

Split parse_split(const std::string& s) {
  try {
    return split_from_string(s);
  } catch (const DatasetError& e) {
    throw CliError(e.what());
  }
}

int cmd_phantom(const fs::path& out, int n_train, int n_test, Eigen::Index height, Eigen::Index width,
                std::uint64_t seed) {
  PhantomConfig pc;
  pc.seed = seed;
  pc.height = height;
  pc.width = width;
  const auto problems = pc.problems();
  if (!problems.empty()) {
    std::string msg = "invalid phantom configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw CliError(msg);
  }
  if (n_train < 0 || n_test < 0) throw CliError("--train and --test must be >= 0");
  const auto m = generate_dataset(pc, n_train, n_test, out);
  std::cout << "wrote " << m.entries.size() << " samples (" << m.count(Split::train) << " train, "
            << m.count(Split::test) << " test) to " << out.string() << "\n";
  return 0;
}

int cmd_train_bio(const fs::path& data, const TrainConfig& config, const fs::path& out) {
  const auto reader = open_dataset(data);
  const auto train = reader.load_split(Split::train);
  const auto test = reader.load_split(Split::test);
  if (train.empty()) throw CliError("dataset '" + data.string() + "' has no training samples");
  auto result = train_bio_stage(train, test, config);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, *result.network, NetworkKind::bio, "stage1");
  result.log.save(out.parent_path().empty() ? fs::path(".") : out.parent_path(), out.stem().string() + "_log");
  std::cout << "stage 1: " << config.epochs << " epochs, validation MAE " << result.validation_mae
            << " px, digest " << digest_hex(result.network->frozen_digest()) << "\n";
  return 0;
}

int cmd_train(const fs::path& data, const std::string& bio_path, const TrainConfig& config, const fs::path& out) {
  std::unique_ptr<BioRegressor<float>> bio;
  if (uses_bio(config.ablation_mode)) {
    if (bio_path.empty()) throw CliError("--mode " + to_string(config.ablation_mode) + " requires --bio CHECKPOINT");
    bio = load_bio(bio_path);
    if (!bio->is_frozen())
      throw CliError("biomarker checkpoint '" + bio_path + "' is not frozen; run train-bio to produce one");
  }
  const auto reader = open_dataset(data);
  const auto train = reader.load_split(Split::train);
  const auto test = reader.load_split(Split::test);
  if (train.empty()) throw CliError("dataset '" + data.string() + "' has no training samples");
  auto result = train_cascade_stage(train, test, bio.get(), config);
  result.model.save(out);
  result.log.save(out, "train_log");
  save_train_config(out / "config.txt", config);
  const auto metrics = evaluate_model(result.model, test);
  write_text(out / "test_metrics.json", metrics_json(metrics));
  std::cout << "stage 2 (" << to_string(config.ablation_mode) << "): " << config.epochs << " epochs\n"
            << metrics_table_text({{to_string(config.ablation_mode), metrics}});
  return 0;
}

std::vector<Sample> load_split_or_all(const DatasetReader& reader, const std::string& split) {
  if (split == "all") {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < reader.size(); ++i) out.push_back(reader.load(i));
    return out;
  }
  return reader.load_split(parse_split(split));
}

ChoroidMask read_mask_file(const fs::path& path, const Sample& s) {
  if (!fs::exists(path)) throw CliError("sample '" + s.id + "': no predicted mask at '" + path.string() + "'");
  const LabelGrid raw = read_png_gray8(path);
  if (raw.rows() != s.choroid.height() || raw.cols() != s.choroid.width())
    throw CliError("sample '" + s.id + "': predicted mask is " + std::to_string(raw.rows()) + "x" +
                   std::to_string(raw.cols()) + ", ground truth is " + std::to_string(s.choroid.height()) + "x" +
                   std::to_string(s.choroid.width()));
  return {(raw >= 128).cast<std::uint8_t>()};
}

void check_model_matches(const ModelBundle& model, const DatasetManifest& m) {
  if (model.num_classes != m.num_classes || model.choroid_class != m.choroid_class)
    throw CliError("model was trained with " + std::to_string(model.num_classes) + " classes (choroid " +
                   std::to_string(model.choroid_class) + ") but the dataset has " + std::to_string(m.num_classes) +
                   " (choroid " + std::to_string(m.choroid_class) + ")");
}

int cmd_eval(const fs::path& data, const std::string& model_dir, const std::string& masks_dir, bool oracle,
             const std::string& split, const std::string& json_out) {
  const auto reader = open_dataset(data);
  const auto samples = load_split_or_all(reader, split);
  if (samples.empty()) throw CliError("no samples in split '" + split + "'");
  const int sources = (model_dir.empty() ? 0 : 1) + (masks_dir.empty() ? 0 : 1) + (oracle ? 1 : 0);
  if (sources != 1) throw CliError("give exactly one of --model, --masks or --oracle");
  MetricsReport report;
  std::string method;
  if (oracle) {
    method = "oracle";
    report = evaluate_predictor([](const Sample& s) { return s.choroid; }, samples);
  } else if (!masks_dir.empty()) {
    method = fs::path(masks_dir).filename().string();
    report = evaluate_predictor([&](const Sample& s) { return read_mask_file(fs::path(masks_dir) / (s.id + ".png"), s); },
                                samples);
  } else {
    auto model = ModelBundle::load(model_dir);
    check_model_matches(model, reader.manifest());
    method = to_string(model.mode);
    report = evaluate_model(model, samples);
  }
  std::cout << metrics_table({{method, report}});
  if (!json_out.empty()) write_text(json_out, metrics_json(report));
  return 0;
}

int cmd_predict(const fs::path& data, const fs::path& model_dir, const std::string& split, const fs::path& out,
                bool overlays) {
  const auto reader = open_dataset(data);
  const auto samples = load_split_or_all(reader, split);
  auto model = ModelBundle::load(model_dir);
  check_model_matches(model, reader.manifest());
  fs::create_directories(out);
  const auto masks = model.predict_masks(samples);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    write_png_gray8(out / (samples[i].id + ".png"), (masks[i].mask * std::uint8_t{255}).eval());
    if (overlays) {
      fs::create_directories(out / "overlays");
      write_overlay_png(out / "overlays" / (samples[i].id + ".png"), samples[i].image.pixels, masks[i],
                        &samples[i].choroid);
    }
  }
  std::cout << "wrote " << masks.size() << " masks to " << out.string() << "\n";
  return 0;
}

int cmd_report(const fs::path& data, const std::vector<std::string>& runs, const fs::path& out, int n_overlays) {
  const auto reader = open_dataset(data);
  const auto test = reader.load_split(Split::test);
  if (test.empty()) throw CliError("dataset '" + data.string() + "' has no test samples");
  fs::create_directories(out);
  std::vector<TableRow> rows;
  std::vector<TrainLog> logs;
  for (const auto& run : runs) {
    auto model = ModelBundle::load(run);
    check_model_matches(model, reader.manifest());
    const std::string method = to_string(model.mode);
    const auto masks = model.predict_masks(test);
    std::vector<ChoroidMask> gts;
    for (const auto& s : test) gts.push_back(s.choroid);
    rows.push_back({method, evaluate_dataset(masks, gts)});
    const fs::path overlay_dir = out / "overlays" / method;
    fs::create_directories(overlay_dir);
    for (std::size_t i = 0; i < test.size() && static_cast<int>(i) < n_overlays; ++i)
      write_overlay_png(overlay_dir / (test[i].id + ".png"), test[i].image.pixels, masks[i], &test[i].choroid);
    if (const fs::path log_path = fs::path(run) / "train_log.csv"; fs::exists(log_path)) {
      auto log = TrainLog::load_csv(log_path);
      log.mode = method;
      logs.push_back(std::move(log));
    }
  }
  const std::string table = metrics_table(rows);
  write_text(out / "table.csv", table);
  write_text(out / "table.txt", metrics_table_text(rows));
  if (!logs.empty()) write_loss_plot(out / "loss_curves.png", logs);
  std::cout << metrics_table_text(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_determinism();
  CLI::App app{"Choroid segmentation with a frozen thickness regressor as loss regularizer"};
  app.require_subcommand(1);

  fs::path out, data;
  int n_train = 64, n_test = 16;
  Eigen::Index height = 128, width = 128;
  std::uint64_t seed = 0;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom dataset");
  phantom->add_option("--out", out, "Output directory")->required();
  phantom->add_option("--train", n_train, "Number of training samples");
  phantom->add_option("--test", n_test, "Number of test samples");
  phantom->add_option("--height", height, "Image height in pixels");
  phantom->add_option("--width", width, "Image width in pixels");
  phantom->add_option("--seed", seed, "Random seed");

  std::string config_path, bio_path, mode = "bionet";
  std::optional<std::uint64_t> seed_override;
  std::optional<int> epochs_override;
  auto add_train_common = [&](CLI::App* cmd) {
    cmd->add_option("--data", data, "Dataset directory or manifest")->required();
    cmd->add_option("--config", config_path, "key = value training config file");
    cmd->add_option("--seed", seed_override, "Override the config seed");
    cmd->add_option("--epochs", epochs_override, "Override the config epoch count");
  };
  auto* train_bio = app.add_subcommand("train-bio", "Stage 1: train and freeze the thickness regressor");
  add_train_common(train_bio);
  train_bio->add_option("--out", out, "Checkpoint path")->required();

  auto* train = app.add_subcommand("train", "Stage 2: train the segmentation networks of one ablation mode");
  add_train_common(train);
  train->add_option("--bio", bio_path, "Frozen biomarker checkpoint (modes unet+bio and bionet)");
  train->add_option("--mode", mode, "unet | gms | unet+gms | unet+bio | bionet");
  train->add_option("--out", out, "Output model directory")->required();

  std::string model_dir, masks_dir, split = "test", json_out;
  bool oracle = false;
  auto* eval = app.add_subcommand("eval", "Print the metric row for a model, a mask directory or the oracle");
  eval->add_option("--data", data, "Dataset directory or manifest")->required();
  eval->add_option("--model", model_dir, "Model directory written by train");
  eval->add_option("--masks", masks_dir, "Directory of <id>.png predicted masks");
  eval->add_flag("--oracle", oracle, "Evaluate the ground truth against itself");
  eval->add_option("--split", split, "train | test | all");
  eval->add_option("--json", json_out, "Also write the full report as JSON");

  bool overlays = false;
  auto* predict = app.add_subcommand("predict", "Write binary choroid masks for every sample of a split");
  predict->add_option("--data", data, "Dataset directory or manifest")->required();
  predict->add_option("--model", model_dir, "Model directory written by train")->required();
  predict->add_option("--split", split, "train | test | all");
  predict->add_option("--out", out, "Output directory")->required();
  predict->add_flag("--overlays", overlays, "Also write overlay images");

  std::vector<std::string> runs;
  int n_overlays = 4;
  auto* report = app.add_subcommand("report", "Metrics table, overlays and loss curves across model directories");
  report->add_option("--data", data, "Dataset directory or manifest")->required();
  report->add_option("--runs", runs, "Model directories, one table row each")->required();
  report->add_option("--out", out, "Output directory")->required();
  report->add_option("--overlays", n_overlays, "Overlay images per run");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*phantom) return cmd_phantom(out, n_train, n_test, height, width, seed);
    if (*train_bio) return cmd_train_bio(data, resolve_config(config_path, seed_override, epochs_override), out);
    if (*train) {
      TrainConfig c = resolve_config(config_path, seed_override, epochs_override);
      if (train->count("--mode") || config_path.empty()) c.ablation_mode = ablation_mode_from_string(mode);
      return cmd_train(data, bio_path, c, out);
    }
    if (*eval) return cmd_eval(data, model_dir, masks_dir, oracle, split, json_out);
    if (*predict) return cmd_predict(data, model_dir, split, out, overlays);
    if (*report) return cmd_report(data, runs, out, n_overlays);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
