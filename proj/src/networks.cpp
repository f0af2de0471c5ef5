#include "bionet/networks.hpp"

#include <stdexcept>

namespace bionet {

void NetworkConfig::validate() const {
  if (in_channels <= 0 || out_channels <= 0) throw std::invalid_argument("NetworkConfig: channel counts must be positive");
  if (base_width <= 0) throw std::invalid_argument("NetworkConfig: base_width must be positive");
  if (depth < 1 || depth > 8) throw std::invalid_argument("NetworkConfig: depth must be in [1, 8]");
  if (bio_head_width <= 0) throw std::invalid_argument("NetworkConfig: bio_head_width must be positive");
  if (norm_groups < 0) throw std::invalid_argument("NetworkConfig: norm_groups must be >= 0");
  if (norm_groups > 0 && base_width % std::min(norm_groups, base_width) != 0)
    throw std::invalid_argument("NetworkConfig: base_width not divisible by norm_groups");
}

std::string to_string(OutputHead head) {
  switch (head) {
    case OutputHead::softmax: return "softmax";
    case OutputHead::sigmoid: return "sigmoid";
    case OutputHead::none: return "none";
  }
  return "none";
}

OutputHead output_head_from_string(const std::string& s) {
  if (s == "softmax") return OutputHead::softmax;
  if (s == "sigmoid") return OutputHead::sigmoid;
  if (s == "none") return OutputHead::none;
  throw std::invalid_argument("unknown output head '" + s + "'");
}

NetworkConfig global_config(Index base_width, Index depth, Index num_classes, std::uint64_t seed) {
  NetworkConfig c;
  c.in_channels = 1;
  c.out_channels = num_classes;
  c.base_width = base_width;
  c.depth = depth;
  c.head = OutputHead::softmax;
  c.seed = seed;
  return c;
}

NetworkConfig local_config(Index base_width, Index depth, Index in_channels, std::uint64_t seed) {
  NetworkConfig c;
  c.in_channels = in_channels;
  c.out_channels = 1;
  c.base_width = base_width;
  c.depth = depth;
  c.head = OutputHead::sigmoid;
  c.seed = seed;
  return c;
}

NetworkConfig bio_config(Index base_width, Index head_width, std::uint64_t seed) {
  NetworkConfig c;
  c.in_channels = 1;
  c.out_channels = 1;
  c.base_width = base_width;
  c.depth = 4;
  c.bio_head_width = head_width;
  c.norm_groups = 0;
  c.head = OutputHead::none;
  c.seed = seed;
  return c;
}

}  // namespace bionet
