#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atl/activation.hpp"
#include "atl/relevance.hpp"
#include "atl/rng.hpp"

namespace testing_support {

/// Random cache with `k` classes of `n` train records each; LAV values are
/// uniform in [0, 1).
inline atl::ActivationCache random_cache(atl::Rng& rng, const std::vector<int>& channels, int k, int n,
                                         int penultimate = 3) {
  atl::ActivationCache cache;
  cache.model_id = "random";
  cache.penultimate_dim = penultimate;
  for (std::size_t l = 0; l < channels.size(); ++l) {
    cache.layers.push_back({static_cast<int>(l), "layer_" + std::to_string(l), channels[l]});
  }
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < n; ++i) {
      atl::ExampleRecord rec;
      rec.example_id = "c" + std::to_string(c) + "/" + std::to_string(i);
      rec.label = {c, "c" + std::to_string(c)};
      for (int ch : channels) {
        std::vector<float> v(static_cast<std::size_t>(ch));
        for (auto& x : v) x = static_cast<float>(rng.uniform01());
        rec.lavs.push_back(std::move(v));
      }
      rec.penultimate.resize(static_cast<std::size_t>(penultimate));
      for (auto& x : rec.penultimate) x = static_cast<float>(rng.uniform01());
      cache.records.push_back(std::move(rec));
    }
  }
  return cache;
}

/// Groups the cache's records of `split` by label id (dense, ascending).
inline std::vector<atl::ClassGroup> groups_of(const atl::ActivationCache& cache,
                                              atl::Split split = atl::Split::Train) {
  std::vector<atl::ClassGroup> groups;
  for (const auto& rec : cache.records) {
    if (rec.split != split) continue;
    const auto id = static_cast<std::size_t>(rec.label.id);
    if (groups.size() <= id) groups.resize(id + 1);
    groups[id].label = rec.label;
    groups[id].examples.push_back(&rec);
  }
  return groups;
}

}  // namespace testing_support
