#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "atl/cache_io.hpp"
#include "atl/error.hpp"
#include "atl/harness.hpp"
#include "atl/reports.hpp"
#include "atl/synthetic.hpp"
#include "atl/teacher.hpp"

namespace atl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Everything a command may need. Defaults follow the reference protocol;
/// a JSON config file fills it first, then explicit flags override.
struct RunConfig {
  std::string model;
  std::string model_manifest;
  std::string dataset;
  std::string cache;
  std::string dataset_id;
  std::string output = "atl_out";
  std::string results;
  std::string split = "all";
  SelectionConfig selection;
  TrainConfig train;
  EpisodeConfig episodes;
  int workers = 1;
  int batch_size = 16;
  int problem_set = 0;
  int problem_way = 5;
  int problem_shot = 3;
  std::vector<double> sweep_p_max = default_p_max_grid();
  std::vector<int> sweep_n_layer = default_n_layer_grid();
  int sweep_way = 5;
  int sweep_shot = 3;
  bool dry_run = false;
  // synth
  int synth_classes = 30;
  int synth_train = 10;
  int synth_test = 10;
  std::uint64_t synth_seed = 7;
  // parity
  std::string fixture;
  std::string images;
  double parity_tolerance = 1e-4;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

HeadKind parse_head(const std::string& text) {
  if (text == "linear") return HeadKind::Linear;
  if (text == "mlp") return HeadKind::Mlp;
  throw UsageError("head must be 'linear' or 'mlp', got '" + text + "'");
}

void apply_config_file(RunConfig& c, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
    auto take = [&](const json& obj, const char* key, auto& dst) {
      if (obj.contains(key)) dst = obj.at(key).get<std::decay_t<decltype(dst)>>();
    };
    take(j, "model", c.model);
    take(j, "model_manifest", c.model_manifest);
    take(j, "dataset", c.dataset);
    take(j, "cache", c.cache);
    take(j, "dataset_id", c.dataset_id);
    take(j, "output", c.output);
    take(j, "results", c.results);
    take(j, "split", c.split);
    take(j, "workers", c.workers);
    take(j, "batch_size", c.batch_size);
    if (j.contains("selection")) {
      take(j["selection"], "p_max", c.selection.p_max);
      take(j["selection"], "n_layer", c.selection.n_layer);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      take(t, "epochs", c.train.epochs);
      take(t, "lr0", c.train.lr0);
      take(t, "decay", c.train.decay);
      take(t, "decay_every", c.train.decay_every);
      take(t, "eval_every", c.train.eval_every);
      take(t, "hidden", c.train.hidden);
      if (t.contains("head")) c.train.head = parse_head(t["head"].get<std::string>());
    }
    if (j.contains("episodes")) {
      const auto& e = j["episodes"];
      take(e, "ways", c.episodes.ways);
      take(e, "shots", c.episodes.shots);
      take(e, "sets", c.episodes.n_sets);
      take(e, "pool_size", c.episodes.pool_size);
      take(e, "master_seed", c.episodes.master_seed);
    }
    if (j.contains("problem")) {
      take(j["problem"], "set", c.problem_set);
      take(j["problem"], "way", c.problem_way);
      take(j["problem"], "shot", c.problem_shot);
    }
    if (j.contains("sweep")) {
      take(j["sweep"], "p_max", c.sweep_p_max);
      take(j["sweep"], "n_layer", c.sweep_n_layer);
      take(j["sweep"], "way", c.sweep_way);
      take(j["sweep"], "shot", c.sweep_shot);
    }
    if (j.contains("synth")) {
      take(j["synth"], "classes", c.synth_classes);
      take(j["synth"], "train_per_class", c.synth_train);
      take(j["synth"], "test_per_class", c.synth_test);
      take(j["synth"], "seed", c.synth_seed);
    }
    if (j.contains("parity")) {
      take(j["parity"], "fixture", c.fixture);
      take(j["parity"], "images", c.images);
      take(j["parity"], "tolerance", c.parity_tolerance);
    }
  } catch (const json::exception& e) {
    throw UsageError("config file '" + path.string() + "' is invalid: " + e.what());
  }
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing required ") + what + " path");
  if (!fs::exists(path)) throw UsageError(std::string(what) + " '" + path + "' does not exist");
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("atl");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* level = std::getenv("ATL_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
}

int cmd_extract(const RunConfig& c) {
  require_file(c.model, "model");
  require_file(c.dataset, "dataset manifest");
  if (c.cache.empty()) throw UsageError("missing required cache output path");
  SplitFilter filter = SplitFilter::All;
  if (c.split == "train") {
    filter = SplitFilter::TrainOnly;
  } else if (c.split == "test") {
    filter = SplitFilter::TestOnly;
  } else if (c.split != "all") {
    throw UsageError("split must be all, train or test");
  }
  const auto dataset = load_dataset_manifest(c.dataset);
  std::optional<fs::path> manifest;
  if (!c.model_manifest.empty()) manifest = c.model_manifest;
  std::vector<TeacherEvaluator> evaluators;
  for (int w = 0; w < std::max(1, c.workers); ++w) evaluators.push_back(load_model(c.model, manifest));
  const auto cache = extract(evaluators, dataset, filter, {c.batch_size});
  write_cache(cache, c.cache);
  std::cout << "wrote " << cache.records.size() << " records, " << cache.layers.size() << " layers to " << c.cache
            << "\ndigest " << cache_digest(cache) << '\n';
  return kSuccess;
}

ActivationCache load_cache_checked(const RunConfig& c) {
  require_file(c.cache, "activation cache");
  return read_cache(c.cache);
}

std::string dataset_id_of(const RunConfig& c) {
  return c.dataset_id.empty() ? fs::path(c.cache).stem().string() : c.dataset_id;
}

std::vector<EpisodeSpec> episodes_of(const RunConfig& c, const ActivationCache& cache) {
  return synthesize_episodes(DatasetIndex::from_cache(cache, dataset_id_of(c)), c.episodes);
}

EpisodeSpec single_problem(const RunConfig& c, const ActivationCache& cache) {
  EpisodeConfig e = c.episodes;
  e.ways = {c.problem_way};
  e.shots = {c.problem_shot};
  e.n_sets = c.problem_set + 1;
  const auto specs = synthesize_episodes(DatasetIndex::from_cache(cache, dataset_id_of(c)), e);
  return specs.back();
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << text;
}

int cmd_relevance(const RunConfig& c, const std::string& out_path) {
  const auto cache = load_cache_checked(c);
  const CacheIndex index(cache);
  const auto spec = single_problem(c, cache);
  const auto data = episode_data(index, spec);
  const auto profiles = profile_layers(cache, data.train);
  std::ostringstream csv;
  write_relevance_csv(csv, profiles);
  write_or_print(out_path, csv.str());
  return kSuccess;
}

int cmd_select(const RunConfig& c, const std::string& out_path) {
  const auto cache = load_cache_checked(c);
  const CacheIndex index(cache);
  const auto spec = single_problem(c, cache);
  const auto data = episode_data(index, spec);
  const auto profiles = profile_layers(cache, data.train);
  const auto ranking = rank_layers(profiles, c.selection.n_layer);
  const auto scores = score_maps(cache, data.train, ranking.selected);
  std::vector<ClassLabel> labels;
  for (const auto& g : data.train) labels.push_back(g.label);
  const auto selection = balance_selection(scores, ranking, c.selection, labels);
  std::ostringstream csv;
  write_selection_csv(csv, selection);
  csv << "# penultimate_dim=" << cache.penultimate_dim << '\n';
  write_or_print(out_path, csv.str());
  return kSuccess;
}

int cmd_run(const RunConfig& c) {
  const auto cache = load_cache_checked(c);
  const auto specs = episodes_of(c, cache);
  if (c.dry_run) {
    std::cout << "plan: " << specs.size() << " problems\n";
    for (const auto& s : specs) std::cout << describe(s) << " seed=" << s.seed << '\n';
    return kSuccess;
  }
  const CacheIndex index(cache);
  const auto result = run_experiment(index, specs, c.selection, c.train, c.workers);
  emit_reports(result, c.output);
  std::size_t ok = 0;
  for (const auto& p : result.problems) ok += p.result.has_value();
  std::cout << ok << "/" << result.problems.size() << " problems succeeded; reports in " << c.output << '\n';
  return result.all_succeeded() ? kSuccess : kRuntimeFailure;
}

int cmd_sweep(const RunConfig& c) {
  const auto cache = load_cache_checked(c);
  EpisodeConfig e = c.episodes;
  e.ways = {c.sweep_way};
  e.shots = {c.sweep_shot};
  const auto family = synthesize_episodes(DatasetIndex::from_cache(cache, dataset_id_of(c)), e);
  const CacheIndex index(cache);
  const auto result = sweep(index, family, c.sweep_p_max, c.sweep_n_layer, c.train, c.workers);
  emit_sweep_report(result, c.output);
  std::cout << result.cells.size() << " sweep cells written to " << c.output << '\n';
  return kSuccess;
}

int cmd_report(const RunConfig& c) {
  require_file(c.results, "results file");
  emit_reports(load_experiment(c.results), c.output);
  std::cout << "reports written to " << c.output << '\n';
  return kSuccess;
}

int cmd_synth(const RunConfig& c) {
  if (c.cache.empty()) throw UsageError("missing required cache output path");
  PlantedFixtureOptions o;
  o.n_classes = c.synth_classes;
  o.train_per_class = c.synth_train;
  o.test_per_class = c.synth_test;
  o.seed = c.synth_seed;
  const auto fixture = make_planted_fixture(o);
  write_cache(fixture.cache, c.cache);
  std::cout << "wrote planted fixture (" << fixture.cache.records.size() << " records) to " << c.cache << "\ndigest "
            << cache_digest(fixture.cache) << '\n';
  return kSuccess;
}

int cmd_parity(const RunConfig& c) {
  require_file(c.model, "model");
  require_file(c.fixture, "parity fixture");
  std::optional<fs::path> manifest;
  if (!c.model_manifest.empty()) manifest = c.model_manifest;
  auto evaluator = load_model(c.model, manifest);
  const auto fixture = read_cache(c.fixture);
  const fs::path root = c.images.empty() ? fs::path(c.fixture).parent_path() : fs::path(c.images);
  const auto report = check_parity(evaluator, fixture, root);
  std::cout << "records " << report.records << " max_abs_diff " << report.max_abs_diff << " worst "
            << report.worst_example << '\n';
  return report.max_abs_diff <= c.parity_tolerance ? kSuccess : kRuntimeFailure;
}

}  // namespace

int run(int argc, const char* const* argv) {
  if (!spdlog::get("atl")) configure_logging();

  CLI::App app{"Adaptive transfer learning: layer relevance, selective feature maps, few-shot benchmarks"};
  app.require_subcommand(1);

  RunConfig c;
  std::string config_path;
  std::string out_file;

  std::optional<std::string> model, model_manifest, dataset, cache, dataset_id, output, results, split, head, fixture,
      images;
  std::optional<double> p_max, lr0, tolerance;
  std::optional<int> n_layer, epochs, sets, pool_size, workers, batch_size, set, way, shot, hidden, sweep_way,
      sweep_shot, classes, train_per_class, test_per_class;
  std::optional<std::uint64_t> seed, synth_seed;
  std::optional<std::vector<int>> ways, shots, sweep_n_layer;
  std::optional<std::vector<double>> sweep_p_max;
  bool dry_run = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; flags override its values");
    sub->add_option("--workers", workers, "Worker threads");
  };
  auto cache_opt = [&](CLI::App* sub) { sub->add_option("--cache", cache, "Activation cache file"); };
  auto selection_opts = [&](CLI::App* sub) {
    sub->add_option("--p-max", p_max, "Maximum p-value threshold (default 0.4)");
    sub->add_option("--n-layer", n_layer, "Number of relevant layers (default 3)");
  };
  auto train_opts = [&](CLI::App* sub) {
    sub->add_option("--epochs", epochs, "Training epochs (default 50)");
    sub->add_option("--lr", lr0, "Initial learning rate (default 0.01)");
    sub->add_option("--head", head, "Classification head: linear or mlp");
    sub->add_option("--hidden", hidden, "Hidden units of the mlp head (default 100)");
  };
  auto episode_opts = [&](CLI::App* sub) {
    sub->add_option("--ways", ways, "Ways (default 5 10 15 20 25 30)");
    sub->add_option("--shots", shots, "Shots (default 3 5 10)");
    sub->add_option("--sets", sets, "Class sets (default 5)");
    sub->add_option("--pool-size", pool_size, "Classes drawn per set (default 30)");
    sub->add_option("--seed", seed, "Master seed (default 0)");
    sub->add_option("--dataset-id", dataset_id, "Dataset name in reports (default: cache file stem)");
  };
  auto problem_opts = [&](CLI::App* sub) {
    sub->add_option("--set", set, "Set index of the inspected problem");
    sub->add_option("--way", way, "Way of the inspected problem");
    sub->add_option("--shot", shot, "Shot of the inspected problem");
    sub->add_option("-o,--out", out_file, "Output CSV (default stdout)");
  };

  auto* extract_cmd = app.add_subcommand("extract", "Run the teacher over a dataset and write an activation cache");
  common(extract_cmd);
  cache_opt(extract_cmd);
  extract_cmd->add_option("--model", model, "ONNX teacher model");
  extract_cmd->add_option("--model-manifest", model_manifest, "Sidecar manifest (default: model path with .json)");
  extract_cmd->add_option("--dataset", dataset, "Dataset manifest JSON");
  extract_cmd->add_option("--split", split, "all, train or test");
  extract_cmd->add_option("--batch-size", batch_size, "Inference batch size (default 16)");

  auto* relevance_cmd = app.add_subcommand("relevance", "Per-layer centroid distances for one problem");
  common(relevance_cmd);
  cache_opt(relevance_cmd);
  episode_opts(relevance_cmd);
  problem_opts(relevance_cmd);

  auto* select_cmd = app.add_subcommand("select", "Selected feature maps for one problem");
  common(select_cmd);
  cache_opt(select_cmd);
  episode_opts(select_cmd);
  problem_opts(select_cmd);
  selection_opts(select_cmd);

  auto* run_cmd = app.add_subcommand("run", "Run the full few-shot experiment and emit reports");
  common(run_cmd);
  cache_opt(run_cmd);
  episode_opts(run_cmd);
  selection_opts(run_cmd);
  train_opts(run_cmd);
  run_cmd->add_option("--out", output, "Report directory");
  run_cmd->add_flag("--dry-run", dry_run, "Print the problem plan without training");

  auto* sweep_cmd = app.add_subcommand("sweep", "Gain over a p_max x n_layer grid");
  common(sweep_cmd);
  cache_opt(sweep_cmd);
  episode_opts(sweep_cmd);
  train_opts(sweep_cmd);
  sweep_cmd->add_option("--out", output, "Report directory");
  sweep_cmd->add_option("--way", sweep_way, "Way of the swept problems (default 5)");
  sweep_cmd->add_option("--shot", sweep_shot, "Shot of the swept problems (default 3)");
  sweep_cmd->add_option("--grid-p-max", sweep_p_max, "p_max grid (default 0.1..0.9)");
  sweep_cmd->add_option("--grid-n-layer", sweep_n_layer, "n_layer grid (default 1..6)");

  auto* report_cmd = app.add_subcommand("report", "Re-emit reports from a results.json");
  common(report_cmd);
  report_cmd->add_option("--results", results, "results.json written by run");
  report_cmd->add_option("--out", output, "Report directory");

  auto* synth_cmd = app.add_subcommand("synth", "Write the planted-feature synthetic cache");
  common(synth_cmd);
  cache_opt(synth_cmd);
  synth_cmd->add_option("--classes", classes, "Number of classes (default 30)");
  synth_cmd->add_option("--train-per-class", train_per_class, "Training examples per class (default 10)");
  synth_cmd->add_option("--test-per-class", test_per_class, "Test examples per class (default 10)");
  synth_cmd->add_option("--seed", synth_seed, "Fixture seed (default 7)");

  auto* parity_cmd = app.add_subcommand("parity", "Compare the backend against a reference activation fixture");
  common(parity_cmd);
  parity_cmd->add_option("--model", model, "ONNX teacher model");
  parity_cmd->add_option("--model-manifest", model_manifest, "Sidecar manifest");
  parity_cmd->add_option("--fixture", fixture, "Fixture in activation-cache format");
  parity_cmd->add_option("--images", images, "Directory the fixture's example ids resolve against");
  parity_cmd->add_option("--tolerance", tolerance, "Max-abs tolerance (default 1e-4)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kSuccess : kUsageError;
  }

  try {
    if (!config_path.empty()) apply_config_file(c, config_path);
    auto set_if = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set_if(c.model, model);
    set_if(c.model_manifest, model_manifest);
    set_if(c.dataset, dataset);
    set_if(c.cache, cache);
    set_if(c.dataset_id, dataset_id);
    set_if(c.output, output);
    set_if(c.results, results);
    set_if(c.split, split);
    set_if(c.fixture, fixture);
    set_if(c.images, images);
    set_if(c.selection.p_max, p_max);
    set_if(c.selection.n_layer, n_layer);
    set_if(c.train.epochs, epochs);
    set_if(c.train.lr0, lr0);
    set_if(c.train.hidden, hidden);
    if (head) c.train.head = parse_head(*head);
    set_if(c.episodes.ways, ways);
    set_if(c.episodes.shots, shots);
    set_if(c.episodes.n_sets, sets);
    set_if(c.episodes.pool_size, pool_size);
    set_if(c.episodes.master_seed, seed);
    set_if(c.workers, workers);
    set_if(c.batch_size, batch_size);
    set_if(c.problem_set, set);
    set_if(c.problem_way, way);
    set_if(c.problem_shot, shot);
    set_if(c.sweep_way, sweep_way);
    set_if(c.sweep_shot, sweep_shot);
    set_if(c.sweep_p_max, sweep_p_max);
    set_if(c.sweep_n_layer, sweep_n_layer);
    set_if(c.synth_classes, classes);
    set_if(c.synth_train, train_per_class);
    set_if(c.synth_test, test_per_class);
    set_if(c.synth_seed, synth_seed);
    set_if(c.parity_tolerance, tolerance);
    c.dry_run = dry_run;

    if (c.workers < 1) throw UsageError("--workers must be at least 1");
    if (c.problem_set < 0) throw UsageError("--set must be non-negative");
    c.selection.validate();
    c.train.validate();
    c.episodes.validate();

    if (extract_cmd->parsed()) return cmd_extract(c);
    if (relevance_cmd->parsed()) return cmd_relevance(c, out_file);
    if (select_cmd->parsed()) return cmd_select(c, out_file);
    if (run_cmd->parsed()) return cmd_run(c);
    if (sweep_cmd->parsed()) return cmd_sweep(c);
    if (report_cmd->parsed()) return cmd_report(c);
    if (synth_cmd->parsed()) return cmd_synth(c);
    if (parity_cmd->parsed()) return cmd_parity(c);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return e.kind() == ErrorKind::Config ? kUsageError : kRuntimeFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace atl::cli
