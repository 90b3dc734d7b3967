#pragma once

#include <ostream>
#include <span>
#include <vector>

#include "atl/activation.hpp"
#include "atl/relevance.hpp"

namespace atl {

struct MapScore {
  LayerId layer;
  int channel = 0;
  std::vector<double> p_per_class;  // indexed like the class groups that produced it
  double p_min = 1.0;
  ClassLabel argmin_class;  // ties go to the lowest class id
};

struct SelectionConfig {
  double p_max = 0.4;
  int n_layer = 3;

  /// Throws Config unless p_max is in (0, 1] and n_layer is positive.
  void validate() const;
};

struct SelectedEntry {
  LayerId layer;
  int channel = 0;
  ClassLabel assigned_class;
  double p_min = 1.0;
  double threshold = 0.0;

  bool operator==(const SelectedEntry&) const = default;
};

struct SelectedFeatureSet {
  std::vector<SelectedEntry> entries;  // ordered by layer index, then channel
  int n_feature = 0;
  int fcl_input_dim = 0;
  /// True when no class had a threshold-passing map and the threshold was dropped.
  bool degraded = false;

  bool operator==(const SelectedFeatureSet&) const = default;
};

/// p_max * r_l / r_max. Throws DegenerateRelevance when r_max is zero.
double layer_threshold(double r_l, double r_max, double p_max);

/// One-vs-rest Welch test per (layer, channel, class) over the groups'
/// examples. Throws DegenerateSample naming the class when a class or its
/// rest pool has fewer than 2 examples.
std::vector<MapScore> score_maps(const ActivationCache& cache, std::span<const ClassGroup> groups,
                                 std::span<const LayerId> layers);

/// Thresholds each selected layer, attributes each candidate to its argmin class, then
/// keeps the N_feature smallest-p candidates per class, where N_feature is the
/// smallest per-class candidate count. When that is zero the threshold is
/// dropped and every class keeps exactly one map. `labels` supplies class
/// names for classes that are no map's argmin.
SelectedFeatureSet balance_selection(std::span<const MapScore> scores, const LayerRanking& ranking,
                                     const SelectionConfig& config, std::span<const ClassLabel> labels = {});

/// CSV: layer_index,layer_name,channel,assigned_class,p_min,threshold; then a
/// "# n_feature=..,fcl_input_dim=..,degraded=.." summary line.
void write_selection_csv(std::ostream& out, const SelectedFeatureSet& selection);

}  // namespace atl
