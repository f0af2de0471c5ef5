#include "bionet/dataset_io.hpp"

#include "bionet/rng.hpp"

#include <json.hpp>

#include <fstream>
#include <numeric>
#include <set>

namespace bionet {

using json = nlohmann::ordered_json;

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw DatasetError("unknown split tag '" + s + "'");
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

void DatasetManifest::save() const {
  json samples = json::array();
  for (const auto& e : entries) {
    samples.push_back({{"id", e.id},
                       {"image", e.image.generic_string()},
                       {"layers", e.layers.generic_string()},
                       {"mask", e.mask.generic_string()},
                       {"thickness", e.thickness},
                       {"split", to_string(e.split)}});
  }
  const json j = {{"format", "bionet-dataset"},
                  {"schema_version", kSchemaVersion},
                  {"num_classes", num_classes},
                  {"choroid_class", choroid_class},
                  {"height", height},
                  {"width", width},
                  {"samples", samples}};
  fs::create_directories(root);
  const fs::path path = root / kFileName;
  std::ofstream os(path);
  if (!os) throw DatasetError("cannot write '" + path.string() + "'");
  os << j.dump(2) << "\n";
  if (!os) throw DatasetError("write failed for '" + path.string() + "'");
}

DatasetManifest DatasetManifest::load(const fs::path& manifest_or_root) {
  const fs::path path = fs::is_directory(manifest_or_root) ? manifest_or_root / kFileName : manifest_or_root;
  std::ifstream is(path);
  if (!is) throw DatasetError("cannot read manifest '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DatasetError("malformed manifest '" + path.string() + "': " + e.what());
  }
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion)
      throw DatasetError("manifest '" + path.string() + "' has schema version " + std::to_string(version) +
                         ", expected " + std::to_string(kSchemaVersion));
    m.num_classes = j.at("num_classes").get<int>();
    m.choroid_class = j.at("choroid_class").get<int>();
    m.height = j.value("height", Eigen::Index{0});
    m.width = j.value("width", Eigen::Index{0});
    std::set<std::string> seen;
    for (const auto& s : j.at("samples")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      if (!seen.insert(e.id).second) throw DatasetError("duplicate sample id '" + e.id + "' in manifest");
      e.image = s.at("image").get<std::string>();
      e.layers = s.at("layers").get<std::string>();
      e.mask = s.at("mask").get<std::string>();
      e.thickness = s.at("thickness").get<double>();
      e.split = split_from_string(s.at("split").get<std::string>());
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw DatasetError("manifest '" + path.string() + "': " + e.what());
  }
  return m;
}

void write_sample(const fs::path& root, const ManifestEntry& entry, const Sample& sample) {
  for (const auto* rel : {&entry.image, &entry.layers, &entry.mask}) fs::create_directories((root / *rel).parent_path());
  write_png_gray16(root / entry.image, sample.image.pixels);
  write_png_gray8(root / entry.layers, sample.layers.labels);
  write_png_gray8(root / entry.mask, (sample.choroid.mask * std::uint8_t{255}).eval());
}

DatasetManifest generate_dataset(const PhantomConfig& config, int n_train, int n_test, const fs::path& out_dir) {
  config.validate();
  if (n_train < 0 || n_test < 0) throw std::invalid_argument("generate_dataset: negative sample count");
  const int total = n_train + n_test;
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::derive(config.seed, 0x73706c6974ULL));
  rng.shuffle(order);
  std::vector<Split> split(static_cast<std::size_t>(total), Split::test);
  for (int i = 0; i < n_train; ++i) split[order[i]] = Split::train;

  DatasetManifest m;
  m.root = out_dir;
  m.num_classes = config.num_layers;
  m.choroid_class = config.choroid_class;
  m.height = config.height;
  m.width = config.width;
  try {
    fs::create_directories(out_dir);
  } catch (const fs::filesystem_error& e) {
    throw DatasetError("cannot create '" + out_dir.string() + "': " + e.what());
  }
  for (int i = 0; i < total; ++i) {
    const Sample s = generate_phantom(config, static_cast<std::uint64_t>(i));
    ManifestEntry e;
    e.id = s.id;
    e.image = fs::path("images") / (s.id + ".png");
    e.layers = fs::path("layers") / (s.id + ".png");
    e.mask = fs::path("masks") / (s.id + ".png");
    e.thickness = s.thickness.value;
    e.split = split[i];
    try {
      write_sample(out_dir, e, s);
    } catch (const fs::filesystem_error& err) {
      throw DatasetError("cannot write sample '" + e.id + "' under '" + out_dir.string() + "': " + err.what());
    }
    m.entries.push_back(std::move(e));
  }
  m.save();
  return m;
}

Sample DatasetReader::load(std::size_t i) const {
  const ManifestEntry& e = manifest_.entries.at(i);
  const fs::path& root = manifest_.root;
  Sample s;
  s.id = e.id;
  s.choroid_class = manifest_.choroid_class;
  s.layers.num_classes = manifest_.num_classes;
  try {
    s.image.pixels = read_png_gray16(root / e.image);
    s.layers.labels = read_png_gray8(root / e.layers);
    const LabelGrid raw = read_png_gray8(root / e.mask);
    if (((raw != 0) && (raw != 255)).any()) throw DatasetError("mask '" + (root / e.mask).string() + "' is not {0,255}");
    s.choroid.mask = (raw == 255).cast<std::uint8_t>();
  } catch (const DatasetError& err) {
    throw DatasetError("sample '" + e.id + "': " + err.what());
  }
  s.thickness.value = e.thickness;
  const auto violations = validate_sample(s);
  if (!violations.empty()) {
    std::string msg = "sample '" + e.id + "' is invalid:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw DatasetError(msg);
  }
  return s;
}

std::vector<Sample> DatasetReader::load_split(Split split) const {
  std::vector<Sample> out;
  for (std::size_t i : manifest_.indices(split)) out.push_back(load(i));
  return out;
}

}  // namespace bionet
