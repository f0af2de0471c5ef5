#include "bionet/losses.hpp"

namespace bionet {

LabelBatch label_batch(const std::vector<const LayerLabelMap*>& maps) {
  if (maps.empty()) throw std::invalid_argument("label_batch: empty batch");
  const Index h = maps.front()->height(), w = maps.front()->width();
  LabelBatch out(static_cast<Index>(maps.size()) * h * w);
  for (std::size_t n = 0; n < maps.size(); ++n) {
    if (maps[n]->height() != h || maps[n]->width() != w) throw std::invalid_argument("label_batch: size mismatch");
    const Index base = static_cast<Index>(n) * h * w;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) out[base + y * w + x] = maps[n]->labels(y, x);
  }
  return out;
}

std::string to_string(CrossEntropyForm form) {
  return form == CrossEntropyForm::categorical ? "categorical" : "per_channel_binary";
}

CrossEntropyForm cross_entropy_form_from_string(const std::string& s) {
  if (s == "categorical") return CrossEntropyForm::categorical;
  if (s == "per_channel_binary") return CrossEntropyForm::per_channel_binary;
  throw std::invalid_argument("unknown cross entropy form '" + s + "'");
}

}  // namespace bionet
