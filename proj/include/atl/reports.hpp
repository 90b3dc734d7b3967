#pragma once

#include <filesystem>
#include <string>

#include "atl/harness.hpp"

namespace atl {

/// Column headers of the emitted tables.
inline constexpr const char* kResultsHeader =
    "dataset,set,way,shot,a_atl_mean,a_atl_std,a_base_mean,a_base_std,gain,n_feature,fcl_input_dim,p_max,n_layer,seed";
inline constexpr const char* kSummaryHeader = "way,shot,mean_gain,n_sets,n_missing";
inline constexpr const char* kRelevancePlotHeader = "set,way,shot,layer_index,layer_name,r_min,r_mean,r_max";
inline constexpr const char* kGainPlotHeader = "set,way,shot,gain";
inline constexpr const char* kInputDimPlotHeader = "set,way,shot,n_feature,fcl_input_dim,penultimate_dim";
inline constexpr const char* kSweepHeader = "way,shot,p_max,n_layer,mean_gain,mean_fcl_input_dim";

std::string results_csv(const ExperimentResult& result);

/// Writes into `dir` (created if missing):
///   results.csv          one row per successful problem
///   summary.csv          mean gain per (way, shot) across sets
///   summary.json         configuration, aggregates, failures
///   relevance_profiles.csv, gain_vs_way.csv, fcl_input_dim.csv   plot data
///   runs.jsonl           one audit record per trained classifier
///   results.json         full result, re-readable by load_experiment
/// Output depends only on `result`, so re-emitting is idempotent.
void emit_reports(const ExperimentResult& result, const std::filesystem::path& dir);

/// sweep.csv and sweep.json.
void emit_sweep_report(const SweepResult& result, const std::filesystem::path& dir);

std::string experiment_to_json(const ExperimentResult& result);
ExperimentResult experiment_from_json(const std::string& text);
ExperimentResult load_experiment(const std::filesystem::path& path);

}  // namespace atl
