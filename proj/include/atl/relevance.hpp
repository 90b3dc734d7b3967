#pragma once

#include <ostream>
#include <span>
#include <vector>

#include "atl/activation.hpp"

namespace atl {

/// The training examples of one class within an episode.
struct ClassGroup {
  ClassLabel label;
  std::vector<const ExampleRecord*> examples;
};

struct ClassCentroid {
  ClassLabel label;
  LayerId layer;
  std::vector<double> vector;
  int n_examples = 0;
};

struct LayerRelevance {
  LayerId layer;
  double r_min = 0.0;  // the layer's relevance score
  double r_mean = 0.0;
  double r_max = 0.0;
};

struct RankedLayer {
  LayerId layer;
  double r_min = 0.0;
};

struct LayerRanking {
  std::vector<RankedLayer> ordered;  // descending r_min, deeper layer first on ties
  std::vector<LayerId> selected;     // first n_layer of `ordered`
  double r_max_global = 0.0;         // max r_min over all layers
};

/// Mean of the L2-normalized LAVs; a zero LAV contributes the zero vector.
/// Throws InvalidInput when empty or when the LAVs span several layers.
ClassCentroid class_centroid(std::span<const Lav> lavs, const ClassLabel& label);
ClassCentroid class_centroid(const LayerId& layer, std::span<const std::span<const float>> lavs,
                             const ClassLabel& label);

/// Min/mean/max Euclidean distance over all centroid pairs; needs k >= 2.
LayerRelevance relevance_profile(std::span<const ClassCentroid> centroids, const LayerId& layer);

/// Relevance of every cache layer for the given class groups.
std::vector<LayerRelevance> profile_layers(const ActivationCache& cache, std::span<const ClassGroup> groups);

/// Throws Config when n_layer <= 0, InvalidInput when it exceeds the layer count.
LayerRanking rank_layers(std::span<const LayerRelevance> profiles, int n_layer);

/// CSV: layer_index,layer_name,r_min,r_mean,r_max
void write_relevance_csv(std::ostream& out, std::span<const LayerRelevance> profiles);

}  // namespace atl
