#pragma once

#include "bionet/networks.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

namespace bionet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NetworkKind { unet, bio };

std::string to_string(NetworkKind kind);

/// Header of a checkpoint file.
///
/// Layout: 8-byte magic "BIONETCK", uint32 schema version, uint64 header
/// length, UTF-8 JSON header, then every parameter as little-endian
/// float32 in parameters() order. The header carries the network kind,
/// NetworkConfig, stage tag, frozen flag and parameter digest.
struct CheckpointInfo {
  static constexpr std::uint32_t kSchemaVersion = 1;

  NetworkKind kind = NetworkKind::unet;
  NetworkConfig config;
  std::string stage;
  bool frozen = false;
  std::uint64_t digest = 0;
};

void save_checkpoint(const std::filesystem::path& path, Network<float>& net, NetworkKind kind, const std::string& stage);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Loaders verify kind, parameter shapes and the stored digest, and restore
/// the frozen flag.
std::unique_ptr<UNet<float>> load_unet(const std::filesystem::path& path, CheckpointInfo* info = nullptr);
std::unique_ptr<BioRegressor<float>> load_bio(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

std::string digest_hex(std::uint64_t digest);

}  // namespace bionet
