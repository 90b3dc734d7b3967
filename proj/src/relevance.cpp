#include "atl/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "atl/error.hpp"
#include "atl/format.hpp"

namespace atl {

ClassCentroid class_centroid(const LayerId& layer, std::span<const std::span<const float>> lavs,
                             const ClassLabel& label) {
  if (lavs.empty()) fail(ErrorKind::InvalidInput, "class_centroid: no examples for class '" + label.name + "'");
  ClassCentroid centroid{label, layer, std::vector<double>(static_cast<std::size_t>(layer.channels), 0.0),
                         static_cast<int>(lavs.size())};
  for (const auto& lav : lavs) {
    if (lav.size() != centroid.vector.size()) {
      fail(ErrorKind::InvalidInput, "class_centroid: LAV length does not match layer '" + layer.name + "'");
    }
    double norm2 = 0.0;
    for (float v : lav) norm2 += static_cast<double>(v) * v;
    if (norm2 == 0.0) continue;
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t c = 0; c < lav.size(); ++c) centroid.vector[c] += lav[c] * inv;
  }
  const double n = static_cast<double>(lavs.size());
  for (auto& v : centroid.vector) v /= n;
  return centroid;
}

ClassCentroid class_centroid(std::span<const Lav> lavs, const ClassLabel& label) {
  if (lavs.empty()) fail(ErrorKind::InvalidInput, "class_centroid: no examples for class '" + label.name + "'");
  std::vector<std::span<const float>> views;
  for (const auto& lav : lavs) {
    if (!(lav.layer == lavs.front().layer)) fail(ErrorKind::InvalidInput, "class_centroid: LAVs from mixed layers");
    views.emplace_back(lav.values);
  }
  return class_centroid(lavs.front().layer, views, label);
}

LayerRelevance relevance_profile(std::span<const ClassCentroid> centroids, const LayerId& layer) {
  if (centroids.size() < 2) {
    fail(ErrorKind::InvalidInput, "relevance needs at least 2 classes, got " + std::to_string(centroids.size()));
  }
  for (const auto& c : centroids) {
    if (c.layer.index != layer.index || c.vector.size() != static_cast<std::size_t>(layer.channels)) {
      fail(ErrorKind::InvalidInput, "relevance_profile: centroid for class '" + c.label.name +
                                        "' is not on layer '" + layer.name + "'");
    }
  }
  LayerRelevance out{layer, std::numeric_limits<double>::infinity(), 0.0, 0.0};
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    for (std::size_t j = i + 1; j < centroids.size(); ++j) {
      double d2 = 0.0;
      const auto& a = centroids[i].vector;
      const auto& b = centroids[j].vector;
      for (std::size_t c = 0; c < a.size(); ++c) d2 += (a[c] - b[c]) * (a[c] - b[c]);
      const double d = std::sqrt(d2);
      out.r_min = std::min(out.r_min, d);
      out.r_max = std::max(out.r_max, d);
      sum += d;
      ++pairs;
    }
  }
  out.r_mean = sum / static_cast<double>(pairs);
  // Guard the ordering invariant against the mean rounding past an extreme.
  out.r_mean = std::clamp(out.r_mean, out.r_min, out.r_max);
  return out;
}

std::vector<LayerRelevance> profile_layers(const ActivationCache& cache, std::span<const ClassGroup> groups) {
  std::vector<LayerRelevance> profiles;
  profiles.reserve(cache.layers.size());
  for (const auto& layer : cache.layers) {
    std::vector<ClassCentroid> centroids;
    for (const auto& group : groups) {
      std::vector<std::span<const float>> lavs;
      for (const auto* rec : group.examples) lavs.push_back(rec->lav(static_cast<std::size_t>(layer.index)));
      centroids.push_back(class_centroid(layer, lavs, group.label));
    }
    profiles.push_back(relevance_profile(centroids, layer));
  }
  return profiles;
}

LayerRanking rank_layers(std::span<const LayerRelevance> profiles, int n_layer) {
  if (n_layer <= 0) fail(ErrorKind::Config, "n_layer must be positive, got " + std::to_string(n_layer));
  if (static_cast<std::size_t>(n_layer) > profiles.size()) {
    fail(ErrorKind::InvalidInput, "n_layer " + std::to_string(n_layer) + " exceeds the " +
                                      std::to_string(profiles.size()) + " available layers");
  }
  LayerRanking ranking;
  for (const auto& p : profiles) {
    ranking.ordered.push_back({p.layer, p.r_min});
    ranking.r_max_global = std::max(ranking.r_max_global, p.r_min);
  }
  std::stable_sort(ranking.ordered.begin(), ranking.ordered.end(), [](const RankedLayer& a, const RankedLayer& b) {
    if (a.r_min != b.r_min) return a.r_min > b.r_min;
    return a.layer.index > b.layer.index;
  });
  for (int i = 0; i < n_layer; ++i) ranking.selected.push_back(ranking.ordered[static_cast<std::size_t>(i)].layer);
  return ranking;
}

void write_relevance_csv(std::ostream& out, std::span<const LayerRelevance> profiles) {
  out << "layer_index,layer_name,r_min,r_mean,r_max\n";
  for (const auto& p : profiles) {
    out << p.layer.index << ',' << p.layer.name << ',' << fixed(p.r_min, 9) << ',' << fixed(p.r_mean, 9) << ','
        << fixed(p.r_max, 9) << '\n';
  }
}

}  // namespace atl
