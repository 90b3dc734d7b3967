#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "atl/activation.hpp"
#include "atl/episodes.hpp"
#include "atl/fcl.hpp"
#include "atl/relevance.hpp"
#include "atl/selection.hpp"

namespace atl {

/// Read-only lookup over a cache: records by id, test records by class.
class CacheIndex {
 public:
  explicit CacheIndex(const ActivationCache& cache);

  const ActivationCache& cache() const { return *cache_; }
  const ExampleRecord& record(const std::string& example_id) const;
  const std::vector<const ExampleRecord*>& test_records(const std::string& class_name) const;

 private:
  const ActivationCache* cache_;
  std::unordered_map<std::string, const ExampleRecord*> by_id_;
  std::unordered_map<std::string, std::vector<const ExampleRecord*>> test_by_class_;
};

/// Train and test rows of one episode; labels are positions in the class list.
struct EpisodeData {
  std::vector<ClassGroup> train;
  std::vector<ClassGroup> test;
};

EpisodeData episode_data(const CacheIndex& index, const EpisodeSpec& spec);

/// Which feature matrices feed the two arms. IdenticalAtl gives the baseline
/// arm the ATL features; Swapped exchanges the arms.
enum class ArmInputs { Standard, IdenticalAtl, Swapped };

struct RunSummary {
  std::uint64_t seed = 0;
  std::vector<EvalPoint> trace;
  double best_accuracy = 0.0;
};

struct ProblemResult {
  EpisodeSpec spec;
  SelectionConfig selection_config;
  double a_atl = 0.0;
  double a_atl_std = 0.0;
  double a_base = 0.0;
  double a_base_std = 0.0;
  double gain = 0.0;  // a_atl - a_base
  std::vector<RunSummary> atl_runs;
  std::vector<RunSummary> base_runs;
  int n_feature = 0;
  int fcl_input_dim = 0;
  int penultimate_dim = 0;
  bool degraded = false;
  std::vector<LayerRelevance> relevance;
  std::vector<int> selected_layers;
};

inline constexpr int kRunsPerArm = 5;

/// relevance -> selection -> feature assembly -> 5 trainings per arm with
/// seeds spec.seed + 0..4. Errors are rethrown prefixed with the spec identity.
ProblemResult run_problem(const CacheIndex& index, const EpisodeSpec& spec, const SelectionConfig& selection,
                          const TrainConfig& train, ArmInputs arms = ArmInputs::Standard);

std::string describe(const EpisodeSpec& spec);

struct ProblemOutcome {
  EpisodeSpec spec;
  std::optional<ProblemResult> result;
  std::string error;
};

struct GainAggregate {
  int way = 0;
  int shot = 0;
  double mean_gain = 0.0;
  int n_sets = 0;     // sets that produced a result
  int n_missing = 0;  // sets whose problem failed
};

struct ExperimentResult {
  std::string dataset_id;
  SelectionConfig selection;
  TrainConfig train;
  std::vector<ProblemOutcome> problems;  // sorted by (set, way, shot)
  std::vector<GainAggregate> aggregates; // sorted by (way, shot)

  bool all_succeeded() const;
};

/// Runs every spec on a bounded pool of `workers` threads.
ExperimentResult run_experiment(const CacheIndex& index, const std::vector<EpisodeSpec>& specs,
                                const SelectionConfig& selection, const TrainConfig& train, int workers = 1);

std::vector<GainAggregate> aggregate_gains(const std::vector<ProblemOutcome>& problems);

struct SweepCell {
  double p_max = 0.0;
  int n_layer = 0;
  double mean_gain = 0.0;
  double mean_fcl_input_dim = 0.0;
  std::vector<double> gains;  // one per spec, in spec order
};

struct SweepResult {
  int way = 0;
  int shot = 0;
  std::vector<double> p_max_grid;
  std::vector<int> n_layer_grid;
  std::vector<SweepCell> cells;  // p_max-major
};

std::vector<double> default_p_max_grid();
std::vector<int> default_n_layer_grid();

/// Evaluates the full grid over a family of specs sharing (way, shot); every
/// cell sees the same episodes and run seeds.
SweepResult sweep(const CacheIndex& index, const std::vector<EpisodeSpec>& family, const std::vector<double>& p_max_grid,
                  const std::vector<int>& n_layer_grid, const TrainConfig& train, int workers = 1);

}  // namespace atl
