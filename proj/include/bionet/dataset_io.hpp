#pragma once

#include "bionet/domain.hpp"
#include "bionet/phantom.hpp"

#include <cstdint>
#include <filesystem>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace bionet {

namespace fs = std::filesystem;

/// I/O or content failure; the message names the offending path or id.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Grayscale PNG helpers. Images are stored 16-bit (value * 65535, rounded),
// label maps 8-bit class ids, masks 8-bit {0, 255}.
void write_png_gray16(const fs::path& path, const ImageGrid& image);
void write_png_gray8(const fs::path& path, const LabelGrid& labels);
/// RGB image, channels given as three equally sized [0, 1] grids.
void write_png_rgb(const fs::path& path, const ImageGrid& r, const ImageGrid& g, const ImageGrid& b);
ImageGrid read_png_gray16(const fs::path& path);
LabelGrid read_png_gray8(const fs::path& path);

enum class Split { train, test };
std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string id;
  fs::path image;   // relative to the dataset root
  fs::path layers;
  fs::path mask;
  double thickness = 0.0;
  Split split = Split::train;
};

/// Contents of `<root>/manifest.json`.
struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;
  static constexpr const char* kFileName = "manifest.json";

  fs::path root;
  int num_classes = kDefaultNumClasses;
  int choroid_class = kDefaultChoroidClass;
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  std::vector<ManifestEntry> entries;

  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const { return indices(split).size(); }

  void save() const;
  static DatasetManifest load(const fs::path& manifest_or_root);
};

void write_sample(const fs::path& root, const ManifestEntry& entry, const Sample& sample);

/// Writes n_train + n_test phantoms under out_dir. Split assignment is a
/// seeded shuffle of the sample indices.
DatasetManifest generate_dataset(const PhantomConfig& config, int n_train, int n_test, const fs::path& out_dir);

/// Lazily loads samples in manifest order; every loaded sample is checked
/// with validate_sample and failures raise DatasetError naming the id.
class DatasetReader {
 public:
  explicit DatasetReader(DatasetManifest manifest) : manifest_(std::move(manifest)) {}
  explicit DatasetReader(const fs::path& manifest_or_root) : manifest_(DatasetManifest::load(manifest_or_root)) {}

  const DatasetManifest& manifest() const { return manifest_; }
  std::size_t size() const { return manifest_.entries.size(); }
  Sample load(std::size_t i) const;
  std::vector<Sample> load_split(Split split) const;

  class iterator {
   public:
    using iterator_category = std::input_iterator_tag;
    using value_type = Sample;
    using difference_type = std::ptrdiff_t;
    using pointer = const Sample*;
    using reference = Sample;

    iterator(const DatasetReader* reader, std::size_t i) : reader_(reader), i_(i) {}
    Sample operator*() const { return reader_->load(i_); }
    iterator& operator++() {
      ++i_;
      return *this;
    }
    bool operator==(const iterator& o) const { return i_ == o.i_; }

   private:
    const DatasetReader* reader_;
    std::size_t i_;
  };

  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, size()}; }

 private:
  DatasetManifest manifest_;
};

inline DatasetReader read_dataset(const fs::path& manifest_or_root) { return DatasetReader(manifest_or_root); }

}  // namespace bionet
