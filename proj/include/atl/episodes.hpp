#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atl/activation.hpp"
#include "atl/teacher.hpp"

namespace atl {

/// Which examples exist, per class and split. Built from a dataset manifest or
/// from an activation cache.
struct DatasetIndex {
  std::string dataset_id;
  struct Item {
    std::string example_id;
    std::string class_name;
    Split split = Split::Train;
  };
  std::vector<Item> items;

  static DatasetIndex from_cache(const ActivationCache& cache, std::string dataset_id);
  static DatasetIndex from_manifest(const DatasetManifest& manifest);
};

struct EpisodeConfig {
  std::vector<int> ways{5, 10, 15, 20, 25, 30};
  std::vector<int> shots{3, 5, 10};
  int n_sets = 5;
  /// Classes drawn per set; defaults to the largest way.
  int pool_size = 30;
  std::uint64_t master_seed = 0;

  void validate() const;
};

struct EpisodeSpec {
  std::string dataset_id;
  int set_index = 0;
  std::vector<std::string> class_pool;  // the set's drawn classes, in draw order
  int way = 0;
  int shot = 0;
  std::uint64_t seed = 0;  // problem seed; run r trains with seed + r
  /// Drawn training example ids for each of the first `way` pool classes.
  std::vector<std::vector<std::string>> train_ids;

  std::vector<std::string> classes() const {
    return {class_pool.begin(), class_pool.begin() + way};
  }

  bool operator==(const EpisodeSpec&) const = default;
};

/// Seed tree (derive = seeding::derive):
///   set seed     = derive(master_seed, set_index)
///   class draw   = derive(set seed, tag("classes"))
///   shot draw    = derive(derive(derive(set seed, tag("shots")), shot), tag(class name))
///   problem seed = derive(derive(set seed, way), shot)
/// Shot draws depend only on (set, shot, class), so the way-w training set is
/// contained in every larger way's training set.
std::vector<EpisodeSpec> synthesize_episodes(const DatasetIndex& dataset, const EpisodeConfig& config);

}  // namespace atl
