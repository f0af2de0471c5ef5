#include "bionet/checkpoint.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace bionet {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::array<char, 8> kMagic{'B', 'I', 'O', 'N', 'E', 'T', 'C', 'K'};

using json = nlohmann::ordered_json;

json config_to_json(const NetworkConfig& c) {
  return {{"in_channels", c.in_channels}, {"out_channels", c.out_channels},     {"base_width", c.base_width},
          {"depth", c.depth},             {"bio_head_width", c.bio_head_width}, {"norm_groups", c.norm_groups},
          {"head", to_string(c.head)},    {"seed", c.seed}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.in_channels = j.at("in_channels").get<Index>();
  c.out_channels = j.at("out_channels").get<Index>();
  c.base_width = j.at("base_width").get<Index>();
  c.depth = j.at("depth").get<Index>();
  c.bio_head_width = j.at("bio_head_width").get<Index>();
  c.norm_groups = j.at("norm_groups").get<Index>();
  c.head = output_head_from_string(j.at("head").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

struct Parsed {
  CheckpointInfo info;
  json header;
  std::streamoff payload_offset = 0;
};

Parsed parse(std::ifstream& is, const std::filesystem::path& path) {
  std::array<char, 8> magic{};
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  is.read(magic.data(), magic.size());
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  is.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!is || magic != kMagic) throw CheckpointError("'" + path.string() + "' is not a checkpoint file");
  if (version != CheckpointInfo::kSchemaVersion)
    throw CheckpointError("'" + path.string() + "' has schema version " + std::to_string(version) + ", expected " +
                          std::to_string(CheckpointInfo::kSchemaVersion));
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw CheckpointError("truncated checkpoint header in '" + path.string() + "'");
  Parsed p;
  try {
    p.header = json::parse(text);
    const auto kind = p.header.at("kind").get<std::string>();
    if (kind == "unet") {
      p.info.kind = NetworkKind::unet;
    } else if (kind == "bio") {
      p.info.kind = NetworkKind::bio;
    } else {
      throw CheckpointError("unknown network kind '" + kind + "'");
    }
    p.info.config = config_from_json(p.header.at("config"));
    p.info.stage = p.header.at("stage").get<std::string>();
    p.info.frozen = p.header.at("frozen").get<bool>();
    p.info.digest = std::stoull(p.header.at("digest").get<std::string>(), nullptr, 16);
  } catch (const json::exception& e) {
    throw CheckpointError("bad checkpoint header in '" + path.string() + "': " + e.what());
  }
  p.payload_offset = is.tellg();
  return p;
}

template <typename Net>
std::unique_ptr<Net> load_network(const std::filesystem::path& path, NetworkKind expected, CheckpointInfo* info_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  Parsed p = parse(is, path);
  if (p.info.kind != expected)
    throw CheckpointError("'" + path.string() + "' holds a " + to_string(p.info.kind) + " network, expected " +
                          to_string(expected));
  auto net = std::make_unique<Net>(p.info.config);
  auto params = net->parameters();
  const auto& listed = p.header.at("parameters");
  if (listed.size() != params.size())
    throw CheckpointError("'" + path.string() + "' lists " + std::to_string(listed.size()) + " parameters, network has " +
                          std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = listed[i];
    if (entry.at("name").get<std::string>() != params[i]->name ||
        entry.at("size").get<Index>() != params[i]->value.size())
      throw CheckpointError("'" + path.string() + "': parameter " + std::to_string(i) + " does not match '" +
                            params[i]->name + "'");
    is.read(reinterpret_cast<char*>(params[i]->value.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(params[i]->value.size())));
    if (!is) throw CheckpointError("truncated parameter data in '" + path.string() + "'");
  }
  if (net->digest() != p.info.digest)
    throw CheckpointError("'" + path.string() + "': parameter digest mismatch (file corrupt?)");
  net->set_frozen(p.info.frozen);
  if (info_out) *info_out = p.info;
  return net;
}

}  // namespace

std::string to_string(NetworkKind kind) { return kind == NetworkKind::unet ? "unet" : "bio"; }

std::string digest_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

void save_checkpoint(const std::filesystem::path& path, Network<float>& net, NetworkKind kind, const std::string& stage) {
  auto params = net.parameters();
  json listed = json::array();
  for (auto* p : params) listed.push_back({{"name", p->name}, {"size", p->value.size()}});
  const json header = {{"kind", to_string(kind)},
                       {"config", config_to_json(net.config())},
                       {"stage", stage},
                       {"frozen", net.is_frozen()},
                       {"digest", digest_hex(net.digest())},
                       {"parameters", listed}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  const std::uint32_t version = CheckpointInfo::kSchemaVersion;
  const std::uint64_t len = text.size();
  os.write(kMagic.data(), kMagic.size());
  os.write(reinterpret_cast<const char*>(&version), sizeof version);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(len));
  for (auto* p : params)
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(p->value.size())));
  if (!os) throw CheckpointError("write failed for '" + path.string() + "'");
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  return parse(is, path).info;
}

std::unique_ptr<UNet<float>> load_unet(const std::filesystem::path& path, CheckpointInfo* info) {
  return load_network<UNet<float>>(path, NetworkKind::unet, info);
}

std::unique_ptr<BioRegressor<float>> load_bio(const std::filesystem::path& path, CheckpointInfo* info) {
  return load_network<BioRegressor<float>>(path, NetworkKind::bio, info);
}

}  // namespace bionet
