#include "atl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <thread>

#include <spdlog/spdlog.h>

#include "atl/error.hpp"

namespace atl {

CacheIndex::CacheIndex(const ActivationCache& cache) : cache_(&cache) {
  for (const auto& rec : cache.records) {
    by_id_.emplace(rec.example_id, &rec);
    if (rec.split == Split::Test) test_by_class_[rec.label.name].push_back(&rec);
  }
}

const ExampleRecord& CacheIndex::record(const std::string& example_id) const {
  auto it = by_id_.find(example_id);
  if (it == by_id_.end()) fail(ErrorKind::InvalidInput, "example '" + example_id + "' is not in the cache");
  return *it->second;
}

const std::vector<const ExampleRecord*>& CacheIndex::test_records(const std::string& class_name) const {
  auto it = test_by_class_.find(class_name);
  if (it == test_by_class_.end() || it->second.empty()) {
    fail(ErrorKind::InvalidInput, "class '" + class_name + "' has no test examples in the cache");
  }
  return it->second;
}

EpisodeData episode_data(const CacheIndex& index, const EpisodeSpec& spec) {
  if (spec.way < 2 || static_cast<std::size_t>(spec.way) > spec.class_pool.size() ||
      spec.train_ids.size() != static_cast<std::size_t>(spec.way)) {
    fail(ErrorKind::InvalidInput, "malformed episode spec");
  }
  EpisodeData data;
  for (int c = 0; c < spec.way; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    const ClassLabel label{c, spec.class_pool[cu]};
    ClassGroup train{label, {}};
    for (const auto& id : spec.train_ids[cu]) {
      const auto& rec = index.record(id);
      if (rec.label.name != label.name || rec.split != Split::Train) {
        fail(ErrorKind::InvalidInput, "example '" + id + "' is not a training example of class '" + label.name + "'");
      }
      train.examples.push_back(&rec);
    }
    data.train.push_back(std::move(train));
    data.test.push_back({label, index.test_records(label.name)});
  }
  return data;
}

std::string describe(const EpisodeSpec& spec) {
  return spec.dataset_id + "/set" + std::to_string(spec.set_index) + "/way" + std::to_string(spec.way) + "/shot" +
         std::to_string(spec.shot);
}

namespace {

struct ArmResult {
  double mean = 0.0;
  double std = 0.0;
  std::vector<RunSummary> runs;
};

ArmResult train_arm(const FeatureMatrix& train, const FeatureMatrix& test, TrainConfig config, std::uint64_t seed) {
  ArmResult arm;
  for (int r = 0; r < kRunsPerArm; ++r) {
    config.seed = seed + static_cast<std::uint64_t>(r);
    const auto clf = train_fcl(train, test, config);
    arm.runs.push_back({clf.seed, clf.accuracy_trace, clf.best_accuracy});
  }
  for (const auto& r : arm.runs) arm.mean += r.best_accuracy;
  arm.mean /= kRunsPerArm;
  double ss = 0.0;
  for (const auto& r : arm.runs) ss += (r.best_accuracy - arm.mean) * (r.best_accuracy - arm.mean);
  arm.std = std::sqrt(ss / (kRunsPerArm - 1));
  return arm;
}

std::vector<ClassLabel> labels_of(const EpisodeData& data) {
  std::vector<ClassLabel> labels;
  for (const auto& g : data.train) labels.push_back(g.label);
  return labels;
}

struct Prepared {
  EpisodeData data;
  std::vector<LayerRelevance> profiles;
  FeatureMatrix base_train;
  FeatureMatrix base_test;
};

Prepared prepare(const CacheIndex& index, const EpisodeSpec& spec) {
  Prepared p;
  p.data = episode_data(index, spec);
  p.profiles = profile_layers(index.cache(), p.data.train);
  p.base_train = assemble_baseline_features(index.cache(), p.data.train);
  p.base_test = assemble_baseline_features(index.cache(), p.data.test);
  return p;
}

ProblemResult finish(const CacheIndex& index, const EpisodeSpec& spec, const Prepared& p, const LayerRanking& ranking,
                     const SelectedFeatureSet& selected, const SelectionConfig& selection, const TrainConfig& train,
                     ArmInputs arms, const ArmResult* cached_base) {
  const FeatureMatrix atl_train = assemble_atl_features(index.cache(), selected, p.data.train);
  const FeatureMatrix atl_test = assemble_atl_features(index.cache(), selected, p.data.test);

  ArmResult atl;
  ArmResult base;
  switch (arms) {
    case ArmInputs::Standard:
      atl = train_arm(atl_train, atl_test, train, spec.seed);
      base = cached_base ? *cached_base : train_arm(p.base_train, p.base_test, train, spec.seed);
      break;
    case ArmInputs::IdenticalAtl:
      atl = train_arm(atl_train, atl_test, train, spec.seed);
      base = train_arm(atl_train, atl_test, train, spec.seed);
      break;
    case ArmInputs::Swapped:
      atl = train_arm(p.base_train, p.base_test, train, spec.seed);
      base = train_arm(atl_train, atl_test, train, spec.seed);
      break;
  }

  ProblemResult r;
  r.spec = spec;
  r.selection_config = selection;
  r.a_atl = atl.mean;
  r.a_atl_std = atl.std;
  r.a_base = base.mean;
  r.a_base_std = base.std;
  r.gain = r.a_atl - r.a_base;
  r.atl_runs = std::move(atl.runs);
  r.base_runs = std::move(base.runs);
  r.n_feature = selected.n_feature;
  r.fcl_input_dim = selected.fcl_input_dim;
  r.penultimate_dim = index.cache().penultimate_dim;
  r.degraded = selected.degraded;
  r.relevance = p.profiles;
  for (const auto& l : ranking.selected) r.selected_layers.push_back(l.index);
  return r;
}

template <typename Fn>
auto annotated(const EpisodeSpec& spec, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), describe(spec) + ": " + e.what());
  }
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// (by index) is rethrown after all jobs finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = static_cast<std::size_t>(std::clamp(workers, 1, 256));
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

ProblemResult run_problem(const CacheIndex& index, const EpisodeSpec& spec, const SelectionConfig& selection,
                          const TrainConfig& train, ArmInputs arms) {
  return annotated(spec, [&] {
    selection.validate();
    train.validate();
    const Prepared p = prepare(index, spec);
    const LayerRanking ranking = rank_layers(p.profiles, selection.n_layer);
    const auto scores = score_maps(index.cache(), p.data.train, ranking.selected);
    const auto labels = labels_of(p.data);
    const auto selected = balance_selection(scores, ranking, selection, labels);
    return finish(index, spec, p, ranking, selected, selection, train, arms, nullptr);
  });
}

bool ExperimentResult::all_succeeded() const {
  return std::all_of(problems.begin(), problems.end(), [](const ProblemOutcome& p) { return p.result.has_value(); });
}

std::vector<GainAggregate> aggregate_gains(const std::vector<ProblemOutcome>& problems) {
  std::map<std::pair<int, int>, GainAggregate> by_key;
  for (const auto& p : problems) {
    auto& agg = by_key[{p.spec.way, p.spec.shot}];
    agg.way = p.spec.way;
    agg.shot = p.spec.shot;
    if (p.result) {
      agg.mean_gain += p.result->gain;
      ++agg.n_sets;
    } else {
      ++agg.n_missing;
    }
  }
  std::vector<GainAggregate> out;
  for (auto& [key, agg] : by_key) {
    if (agg.n_sets > 0) agg.mean_gain /= agg.n_sets;
    out.push_back(agg);
  }
  return out;
}

ExperimentResult run_experiment(const CacheIndex& index, const std::vector<EpisodeSpec>& specs,
                                const SelectionConfig& selection, const TrainConfig& train, int workers) {
  selection.validate();
  train.validate();
  ExperimentResult out;
  out.dataset_id = specs.empty() ? std::string() : specs.front().dataset_id;
  out.selection = selection;
  out.train = train;
  out.problems.resize(specs.size());
  std::atomic<std::size_t> done{0};
  parallel_for(specs.size(), workers, [&](std::size_t i) {
    auto& outcome = out.problems[i];
    outcome.spec = specs[i];
    try {
      outcome.result = run_problem(index, specs[i], selection, train);
    } catch (const Error& e) {
      outcome.error = e.what();
      spdlog::warn("{}", outcome.error);
    }
    spdlog::debug("problem {}/{} done: {}", ++done, specs.size(), describe(specs[i]));
  });
  std::stable_sort(out.problems.begin(), out.problems.end(), [](const ProblemOutcome& a, const ProblemOutcome& b) {
    return std::tie(a.spec.set_index, a.spec.way, a.spec.shot) < std::tie(b.spec.set_index, b.spec.way, b.spec.shot);
  });
  out.aggregates = aggregate_gains(out.problems);
  return out;
}

std::vector<double> default_p_max_grid() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

std::vector<int> default_n_layer_grid() { return {1, 2, 3, 4, 5, 6}; }

SweepResult sweep(const CacheIndex& index, const std::vector<EpisodeSpec>& family, const std::vector<double>& p_max_grid,
                  const std::vector<int>& n_layer_grid, const TrainConfig& train, int workers) {
  if (family.empty()) fail(ErrorKind::Config, "sweep needs at least one episode");
  if (p_max_grid.empty() || n_layer_grid.empty()) fail(ErrorKind::Config, "sweep grids must be non-empty");
  for (const auto& s : family) {
    if (s.way != family.front().way || s.shot != family.front().shot) {
      fail(ErrorKind::Config, "sweep family must share one (way, shot)");
    }
  }
  for (double p : p_max_grid) SelectionConfig{p, 1}.validate();
  for (int n : n_layer_grid) SelectionConfig{0.4, n}.validate();
  train.validate();
  const int max_layers = *std::max_element(n_layer_grid.begin(), n_layer_grid.end());

  // Per spec: everything that does not depend on the hyperparameters.
  struct SpecState {
    Prepared prepared;
    std::vector<MapScore> scores;
    ArmResult base;
  };
  std::vector<SpecState> states(family.size());
  parallel_for(family.size(), workers, [&](std::size_t i) {
    annotated(family[i], [&] {
      auto& st = states[i];
      st.prepared = prepare(index, family[i]);
      const auto widest = rank_layers(st.prepared.profiles, max_layers);
      st.scores = score_maps(index.cache(), st.prepared.data.train, widest.selected);
      st.base = train_arm(st.prepared.base_train, st.prepared.base_test, train, family[i].seed);
      return 0;
    });
  });

  SweepResult out;
  out.way = family.front().way;
  out.shot = family.front().shot;
  out.p_max_grid = p_max_grid;
  out.n_layer_grid = n_layer_grid;
  for (double p : p_max_grid) {
    for (int n : n_layer_grid) out.cells.push_back({p, n, 0.0, 0.0, std::vector<double>(family.size(), 0.0)});
  }
  std::vector<std::vector<int>> dims(out.cells.size(), std::vector<int>(family.size(), 0));
  const std::size_t jobs = out.cells.size() * family.size();
  parallel_for(jobs, workers, [&](std::size_t job) {
    const std::size_t c = job / family.size();
    const std::size_t s = job % family.size();
    auto& cell = out.cells[c];
    const auto& spec = family[s];
    annotated(spec, [&] {
      const auto& st = states[s];
      const SelectionConfig cfg{cell.p_max, cell.n_layer};
      const auto ranking = rank_layers(st.prepared.profiles, cell.n_layer);
      const auto selected = balance_selection(st.scores, ranking, cfg, labels_of(st.prepared.data));
      const auto r = finish(index, spec, st.prepared, ranking, selected, cfg, train, ArmInputs::Standard, &st.base);
      cell.gains[s] = r.gain;
      dims[c][s] = r.fcl_input_dim;
      return 0;
    });
  });
  for (std::size_t c = 0; c < out.cells.size(); ++c) {
    auto& cell = out.cells[c];
    cell.mean_gain = std::accumulate(cell.gains.begin(), cell.gains.end(), 0.0) / static_cast<double>(family.size());
    cell.mean_fcl_input_dim =
        std::accumulate(dims[c].begin(), dims[c].end(), 0.0) / static_cast<double>(family.size());
  }
  return out;
}

}  // namespace atl
