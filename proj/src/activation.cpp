#include "atl/activation.hpp"

#include <cmath>
#include <unordered_set>

#include "atl/error.hpp"

namespace atl {

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  fail(ErrorKind::Schema, "unknown split '" + std::string(text) + "' (expected train or test)");
}

void validate(const ActivationCache& cache) {
  if (cache.penultimate_dim < 1) fail(ErrorKind::Schema, "penultimate_dim must be positive");
  for (std::size_t i = 0; i < cache.layers.size(); ++i) {
    const auto& layer = cache.layers[i];
    if (layer.index != static_cast<int>(i)) {
      fail(ErrorKind::Schema, "layer '" + layer.name + "' has index " + std::to_string(layer.index) +
                                  ", expected " + std::to_string(i));
    }
    if (layer.channels < 1) fail(ErrorKind::Schema, "layer '" + layer.name + "' has no channels");
  }
  std::unordered_set<std::string> seen;
  for (const auto& record : cache.records) {
    if (!seen.insert(record.example_id).second) {
      fail(ErrorKind::Schema, "duplicate example id '" + record.example_id + "'");
    }
    if (record.lavs.size() != cache.layers.size()) {
      fail(ErrorKind::Schema, "record '" + record.example_id + "' has " + std::to_string(record.lavs.size()) +
                                  " LAVs for " + std::to_string(cache.layers.size()) + " layers");
    }
    for (std::size_t i = 0; i < cache.layers.size(); ++i) {
      if (record.lavs[i].size() != static_cast<std::size_t>(cache.layers[i].channels)) {
        fail(ErrorKind::Schema, "record '" + record.example_id + "' layer '" + cache.layers[i].name +
                                    "' has wrong channel count");
      }
    }
    if (record.penultimate.size() != static_cast<std::size_t>(cache.penultimate_dim)) {
      fail(ErrorKind::Schema, "record '" + record.example_id + "' penultimate length mismatch");
    }
  }
}

float global_max_pool(MapView map) {
  if (map.height == 0 || map.width == 0 || map.values.size() != map.height * map.width) {
    fail(ErrorKind::InvalidInput, "global_max_pool: empty or malformed grid");
  }
  float best = map.values.front();
  for (float v : map.values) {
    if (!std::isfinite(v)) fail(ErrorKind::InvalidInput, "global_max_pool: non-finite activation");
    if (v > best) best = v;
  }
  return best;
}

Lav build_lav(TensorView activations, const LayerId& layer) {
  if (activations.channels != static_cast<std::size_t>(layer.channels)) {
    fail(ErrorKind::Schema, "layer '" + layer.name + "' expects " + std::to_string(layer.channels) +
                                " channels, got " + std::to_string(activations.channels));
  }
  if (activations.values.size() != activations.channels * activations.height * activations.width) {
    fail(ErrorKind::InvalidInput, "layer '" + layer.name + "': tensor size does not match its shape");
  }
  Lav lav{layer, {}};
  lav.values.reserve(activations.channels);
  for (std::size_t c = 0; c < activations.channels; ++c) {
    lav.values.push_back(global_max_pool(activations.channel(c)));
  }
  return lav;
}

}  // namespace atl
