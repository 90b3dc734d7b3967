#include "atl/episodes.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "atl/error.hpp"
#include "atl/rng.hpp"

namespace atl {

DatasetIndex DatasetIndex::from_cache(const ActivationCache& cache, std::string dataset_id) {
  DatasetIndex index{std::move(dataset_id), {}};
  for (const auto& rec : cache.records) index.items.push_back({rec.example_id, rec.label.name, rec.split});
  return index;
}

DatasetIndex DatasetIndex::from_manifest(const DatasetManifest& manifest) {
  DatasetIndex index{manifest.dataset_id, {}};
  for (const auto& e : manifest.entries) index.items.push_back({e.path, e.class_name, e.split});
  return index;
}

void EpisodeConfig::validate() const {
  if (ways.empty() || shots.empty()) fail(ErrorKind::Config, "episode config needs at least one way and one shot");
  if (n_sets < 1) fail(ErrorKind::Config, "n_sets must be positive");
  for (int w : ways) {
    if (w < 2) fail(ErrorKind::Config, "every way must be at least 2");
    if (w > pool_size) fail(ErrorKind::Config, "way " + std::to_string(w) + " exceeds the class pool size");
  }
  for (int s : shots) {
    if (s < 1) fail(ErrorKind::Config, "every shot must be positive");
  }
}

std::vector<EpisodeSpec> synthesize_episodes(const DatasetIndex& dataset, const EpisodeConfig& config) {
  config.validate();

  std::map<std::string, std::vector<std::string>> train_of;
  std::set<std::string> has_test;
  for (const auto& item : dataset.items) {
    if (item.split == Split::Train) {
      train_of[item.class_name].push_back(item.example_id);
    } else {
      has_test.insert(item.class_name);
    }
  }
  std::vector<std::string> eligible;
  for (auto& [name, ids] : train_of) {
    std::sort(ids.begin(), ids.end());
    if (has_test.count(name)) eligible.push_back(name);
  }
  if (static_cast<int>(eligible.size()) < config.pool_size) {
    fail(ErrorKind::Synthesis, "dataset '" + dataset.dataset_id + "' has " + std::to_string(eligible.size()) +
                                   " classes with both train and test examples; " +
                                   std::to_string(config.pool_size) + " are required");
  }

  std::vector<int> ways = config.ways;
  std::sort(ways.begin(), ways.end());
  std::vector<int> shots = config.shots;
  std::sort(shots.begin(), shots.end());

  std::vector<EpisodeSpec> specs;
  for (int set = 0; set < config.n_sets; ++set) {
    const std::uint64_t set_seed = seeding::derive(config.master_seed, static_cast<std::uint64_t>(set));
    std::vector<std::string> pool = eligible;
    Rng class_rng(seeding::derive(set_seed, seeding::tag("classes")));
    class_rng.shuffle(pool);
    pool.resize(static_cast<std::size_t>(config.pool_size));

    const std::uint64_t shots_seed = seeding::derive(set_seed, seeding::tag("shots"));
    std::map<int, std::vector<std::vector<std::string>>> drawn;
    for (int shot : shots) {
      auto& per_class = drawn[shot];
      for (const auto& name : pool) {
        const auto& ids = train_of.at(name);
        if (static_cast<int>(ids.size()) < shot) {
          fail(ErrorKind::Synthesis, "class '" + name + "' has " + std::to_string(ids.size()) +
                                         " training examples, fewer than shot " + std::to_string(shot));
        }
        std::vector<std::string> pick = ids;
        Rng rng(seeding::derive(seeding::derive(shots_seed, static_cast<std::uint64_t>(shot)), seeding::tag(name)));
        rng.shuffle(pick);
        pick.resize(static_cast<std::size_t>(shot));
        per_class.push_back(std::move(pick));
      }
    }

    for (int way : ways) {
      for (int shot : shots) {
        EpisodeSpec spec;
        spec.dataset_id = dataset.dataset_id;
        spec.set_index = set;
        spec.class_pool = pool;
        spec.way = way;
        spec.shot = shot;
        spec.seed = seeding::derive(seeding::derive(set_seed, static_cast<std::uint64_t>(way)),
                                    static_cast<std::uint64_t>(shot));
        const auto& per_class = drawn.at(shot);
        spec.train_ids.assign(per_class.begin(), per_class.begin() + way);
        specs.push_back(std::move(spec));
      }
    }
  }
  return specs;
}

}  // namespace atl
