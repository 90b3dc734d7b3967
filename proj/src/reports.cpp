#include "atl/reports.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "atl/error.hpp"
#include "atl/format.hpp"

namespace atl {

using nlohmann::json;

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    fail(ErrorKind::Io, "cannot create output directory '" + dir.string() + "'");
  }
}

json spec_json(const EpisodeSpec& s) {
  return {{"dataset_id", s.dataset_id}, {"set_index", s.set_index}, {"class_pool", s.class_pool},
          {"way", s.way},               {"shot", s.shot},           {"seed", s.seed},
          {"train_ids", s.train_ids}};
}

EpisodeSpec spec_from(const json& j) {
  EpisodeSpec s;
  s.dataset_id = j.at("dataset_id").get<std::string>();
  s.set_index = j.at("set_index").get<int>();
  s.class_pool = j.at("class_pool").get<std::vector<std::string>>();
  s.way = j.at("way").get<int>();
  s.shot = j.at("shot").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train_ids = j.at("train_ids").get<std::vector<std::vector<std::string>>>();
  return s;
}

json runs_json(const std::vector<RunSummary>& runs) {
  json out = json::array();
  for (const auto& r : runs) {
    json trace = json::array();
    for (const auto& p : r.trace) trace.push_back({p.epoch, p.accuracy});
    out.push_back({{"seed", r.seed}, {"best_accuracy", r.best_accuracy}, {"trace", trace}});
  }
  return out;
}

std::vector<RunSummary> runs_from(const json& j) {
  std::vector<RunSummary> out;
  for (const auto& r : j) {
    RunSummary s;
    s.seed = r.at("seed").get<std::uint64_t>();
    s.best_accuracy = r.at("best_accuracy").get<double>();
    for (const auto& p : r.at("trace")) s.trace.push_back({p.at(0).get<int>(), p.at(1).get<double>()});
    out.push_back(std::move(s));
  }
  return out;
}

json train_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr0", c.lr0},
          {"decay", c.decay},
          {"decay_every", c.decay_every},
          {"eval_every", c.eval_every},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"head", c.head == HeadKind::Linear ? "linear" : "mlp"},
          {"hidden", c.hidden}};
}

TrainConfig train_from(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.lr0 = j.at("lr0").get<double>();
  c.decay = j.at("decay").get<double>();
  c.decay_every = j.at("decay_every").get<int>();
  c.eval_every = j.at("eval_every").get<int>();
  c.adam.beta1 = j.at("beta1").get<double>();
  c.adam.beta2 = j.at("beta2").get<double>();
  c.adam.eps = j.at("eps").get<double>();
  c.head = j.at("head").get<std::string>() == "mlp" ? HeadKind::Mlp : HeadKind::Linear;
  c.hidden = j.at("hidden").get<int>();
  return c;
}

}  // namespace

std::string experiment_to_json(const ExperimentResult& result) {
  json problems = json::array();
  for (const auto& p : result.problems) {
    json entry = {{"spec", spec_json(p.spec)}};
    if (p.result) {
      const auto& r = *p.result;
      json relevance = json::array();
      for (const auto& l : r.relevance) {
        relevance.push_back({{"index", l.layer.index}, {"name", l.layer.name}, {"channels", l.layer.channels},
                             {"r_min", l.r_min}, {"r_mean", l.r_mean}, {"r_max", l.r_max}});
      }
      entry["result"] = {{"p_max", r.selection_config.p_max},
                         {"n_layer", r.selection_config.n_layer},
                         {"a_atl", r.a_atl},
                         {"a_atl_std", r.a_atl_std},
                         {"a_base", r.a_base},
                         {"a_base_std", r.a_base_std},
                         {"gain", r.gain},
                         {"atl_runs", runs_json(r.atl_runs)},
                         {"base_runs", runs_json(r.base_runs)},
                         {"n_feature", r.n_feature},
                         {"fcl_input_dim", r.fcl_input_dim},
                         {"penultimate_dim", r.penultimate_dim},
                         {"degraded", r.degraded},
                         {"relevance", relevance},
                         {"selected_layers", r.selected_layers}};
    } else {
      entry["error"] = p.error;
    }
    problems.push_back(std::move(entry));
  }
  const json j = {{"dataset_id", result.dataset_id},
                  {"selection", {{"p_max", result.selection.p_max}, {"n_layer", result.selection.n_layer}}},
                  {"train", train_json(result.train)},
                  {"problems", problems}};
  return j.dump(1) + "\n";
}

ExperimentResult experiment_from_json(const std::string& text) {
  ExperimentResult out;
  try {
    const json j = json::parse(text);
    out.dataset_id = j.at("dataset_id").get<std::string>();
    out.selection = {j.at("selection").at("p_max").get<double>(), j.at("selection").at("n_layer").get<int>()};
    out.train = train_from(j.at("train"));
    for (const auto& p : j.at("problems")) {
      ProblemOutcome outcome;
      outcome.spec = spec_from(p.at("spec"));
      if (p.contains("result")) {
        const auto& r = p.at("result");
        ProblemResult res;
        res.spec = outcome.spec;
        res.selection_config = {r.at("p_max").get<double>(), r.at("n_layer").get<int>()};
        res.a_atl = r.at("a_atl").get<double>();
        res.a_atl_std = r.at("a_atl_std").get<double>();
        res.a_base = r.at("a_base").get<double>();
        res.a_base_std = r.at("a_base_std").get<double>();
        res.gain = r.at("gain").get<double>();
        res.atl_runs = runs_from(r.at("atl_runs"));
        res.base_runs = runs_from(r.at("base_runs"));
        res.n_feature = r.at("n_feature").get<int>();
        res.fcl_input_dim = r.at("fcl_input_dim").get<int>();
        res.penultimate_dim = r.at("penultimate_dim").get<int>();
        res.degraded = r.at("degraded").get<bool>();
        for (const auto& l : r.at("relevance")) {
          res.relevance.push_back({{l.at("index").get<int>(), l.at("name").get<std::string>(),
                                    l.at("channels").get<int>()},
                                   l.at("r_min").get<double>(),
                                   l.at("r_mean").get<double>(),
                                   l.at("r_max").get<double>()});
        }
        res.selected_layers = r.at("selected_layers").get<std::vector<int>>();
        outcome.result = std::move(res);
      } else {
        outcome.error = p.value("error", std::string("unknown failure"));
      }
      out.problems.push_back(std::move(outcome));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("results file is malformed: ") + e.what());
  }
  out.aggregates = aggregate_gains(out.problems);
  return out;
}

ExperimentResult load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open results file '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return experiment_from_json(buffer.str());
}

std::string results_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << kResultsHeader << '\n';
  for (const auto& p : result.problems) {
    if (!p.result) continue;
    const auto& r = *p.result;
    out << r.spec.dataset_id << ',' << r.spec.set_index << ',' << r.spec.way << ',' << r.spec.shot << ','
        << fixed(r.a_atl) << ',' << fixed(r.a_atl_std) << ',' << fixed(r.a_base) << ',' << fixed(r.a_base_std) << ','
        << fixed(r.gain) << ',' << r.n_feature << ',' << r.fcl_input_dim << ',' << exact(r.selection_config.p_max)
        << ',' << r.selection_config.n_layer << ',' << r.spec.seed << '\n';
  }
  return out.str();
}

void emit_reports(const ExperimentResult& result, const std::filesystem::path& dir) {
  ensure_dir(dir);
  write_file(dir / "results.csv", results_csv(result));

  std::ostringstream summary;
  summary << kSummaryHeader << '\n';
  for (const auto& a : result.aggregates) {
    summary << a.way << ',' << a.shot << ',' << fixed(a.mean_gain) << ',' << a.n_sets << ',' << a.n_missing << '\n';
  }
  write_file(dir / "summary.csv", summary.str());

  json aggregates = json::array();
  for (const auto& a : result.aggregates) {
    aggregates.push_back({{"way", a.way}, {"shot", a.shot}, {"mean_gain", a.mean_gain}, {"n_sets", a.n_sets},
                          {"n_missing", a.n_missing}});
  }
  json failures = json::array();
  std::size_t succeeded = 0;
  double gain_sum = 0.0;
  for (const auto& p : result.problems) {
    if (p.result) {
      ++succeeded;
      gain_sum += p.result->gain;
    } else {
      failures.push_back({{"problem", describe(p.spec)}, {"error", p.error}});
    }
  }
  const json summary_json = {
      {"dataset_id", result.dataset_id},
      {"selection", {{"p_max", result.selection.p_max}, {"n_layer", result.selection.n_layer}}},
      {"train", train_json(result.train)},
      {"problems", result.problems.size()},
      {"succeeded", succeeded},
      {"mean_gain", succeeded ? gain_sum / static_cast<double>(succeeded) : 0.0},
      {"aggregates", aggregates},
      {"failures", failures},
      {"accuracy_protocol", "best test accuracy over the sampled epochs (test set observed during training)"}};
  write_file(dir / "summary.json", summary_json.dump(2) + "\n");

  std::ostringstream relevance;
  std::ostringstream gains;
  std::ostringstream dims;
  std::ostringstream runs;
  relevance << kRelevancePlotHeader << '\n';
  gains << kGainPlotHeader << '\n';
  dims << kInputDimPlotHeader << '\n';
  for (const auto& p : result.problems) {
    if (!p.result) continue;
    const auto& r = *p.result;
    const auto& s = r.spec;
    for (const auto& l : r.relevance) {
      relevance << s.set_index << ',' << s.way << ',' << s.shot << ',' << l.layer.index << ',' << l.layer.name << ','
                << fixed(l.r_min, 9) << ',' << fixed(l.r_mean, 9) << ',' << fixed(l.r_max, 9) << '\n';
    }
    gains << s.set_index << ',' << s.way << ',' << s.shot << ',' << fixed(r.gain) << '\n';
    dims << s.set_index << ',' << s.way << ',' << s.shot << ',' << r.n_feature << ',' << r.fcl_input_dim << ','
         << r.penultimate_dim << '\n';
    for (const auto& [arm, list] : {std::pair{"atl", &r.atl_runs}, std::pair{"baseline", &r.base_runs}}) {
      for (const auto& run : *list) {
        json trace = json::array();
        for (const auto& e : run.trace) trace.push_back({{"epoch", e.epoch}, {"accuracy", e.accuracy}});
        runs << json{{"problem", describe(s)},
                     {"arm", arm},
                     {"seed", run.seed},
                     {"config_digest", config_digest(result.train)},
                     {"trace", trace},
                     {"best_accuracy", run.best_accuracy}}
                    .dump()
             << '\n';
      }
    }
  }
  write_file(dir / "relevance_profiles.csv", relevance.str());
  write_file(dir / "gain_vs_way.csv", gains.str());
  write_file(dir / "fcl_input_dim.csv", dims.str());
  write_file(dir / "runs.jsonl", runs.str());
  write_file(dir / "results.json", experiment_to_json(result));
}

void emit_sweep_report(const SweepResult& result, const std::filesystem::path& dir) {
  ensure_dir(dir);
  std::ostringstream csv;
  csv << kSweepHeader << '\n';
  json cells = json::array();
  for (const auto& c : result.cells) {
    csv << result.way << ',' << result.shot << ',' << exact(c.p_max) << ',' << c.n_layer << ',' << fixed(c.mean_gain)
        << ',' << fixed(c.mean_fcl_input_dim, 3) << '\n';
    cells.push_back({{"p_max", c.p_max}, {"n_layer", c.n_layer}, {"mean_gain", c.mean_gain},
                     {"mean_fcl_input_dim", c.mean_fcl_input_dim}, {"gains", c.gains}});
  }
  write_file(dir / "sweep.csv", csv.str());
  const json j = {{"way", result.way}, {"shot", result.shot}, {"p_max_grid", result.p_max_grid},
                  {"n_layer_grid", result.n_layer_grid}, {"cells", cells}};
  write_file(dir / "sweep.json", j.dump(2) + "\n");
}

}  // namespace atl
