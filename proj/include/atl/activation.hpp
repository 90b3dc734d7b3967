#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace atl {

struct ClassLabel {
  int id = 0;
  std::string name;

  bool operator==(const ClassLabel&) const = default;
};

struct LayerId {
  int index = 0;
  std::string name;
  int channels = 1;

  bool operator==(const LayerId&) const = default;
};

enum class Split { Train, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// Reduced layer activation vector: one global max per channel.
struct Lav {
  LayerId layer;
  std::vector<float> values;

  bool operator==(const Lav&) const = default;
};

/// One example's activations. lavs[i] belongs to the cache's layers[i]; the
/// LayerId is stored once on the cache rather than per record.
struct ExampleRecord {
  std::string example_id;
  ClassLabel label;
  Split split = Split::Train;
  std::vector<std::vector<float>> lavs;
  std::vector<float> penultimate;

  std::span<const float> lav(std::size_t layer_index) const { return lavs.at(layer_index); }

  bool operator==(const ExampleRecord&) const = default;
};

struct ActivationCache {
  std::string model_id;
  std::vector<LayerId> layers;
  int penultimate_dim = 1;
  std::vector<ExampleRecord> records;

  bool operator==(const ActivationCache&) const = default;
};

/// Throws Schema if layer indices are not dense, a record's LAV count or
/// lengths disagree with the layer list, or example ids repeat.
void validate(const ActivationCache& cache);

/// Row-major H×W grid.
struct MapView {
  std::span<const float> values;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Row-major C×H×W tensor for one example.
struct TensorView {
  std::span<const float> values;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  MapView channel(std::size_t c) const {
    const std::size_t plane = height * width;
    return {values.subspan(c * plane, plane), height, width};
  }
};

float global_max_pool(MapView map);

Lav build_lav(TensorView activations, const LayerId& layer);

}  // namespace atl
