#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "atl/error.hpp"
#include "atl/harness.hpp"
#include "atl/reports.hpp"
#include "atl/synthetic.hpp"

using namespace atl;
namespace fs = std::filesystem;

namespace {

struct World {
  PlantedFixture fx = make_planted_fixture();
  CacheIndex index{fx.cache};
  std::vector<EpisodeSpec> specs = synthesize_episodes(DatasetIndex::from_cache(fx.cache, "planted"), {});

  const EpisodeSpec& find(int set, int way, int shot) const {
    for (const auto& s : specs) {
      if (s.set_index == set && s.way == way && s.shot == shot) return s;
    }
    throw std::runtime_error("no such spec");
  }
};

const World& world() {
  static const World w;
  return w;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("run problem on planted data") {
  const auto& w = world();
  const auto r = run_problem(w.index, w.find(0, 5, 3), {}, {});
  CHECK(r.gain == r.a_atl - r.a_base);
  CHECK(r.gain >= 0.10);
  CHECK(r.atl_runs.size() == 5);
  CHECK(r.base_runs.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(r.atl_runs[i].seed == r.spec.seed + i);
  CHECK(r.fcl_input_dim == 5 * r.n_feature);
  CHECK(r.penultimate_dim == 64);
  CHECK(r.selected_layers.size() == 3);
  CHECK(r.relevance.size() == 8);

  const auto again = run_problem(w.index, w.find(0, 5, 3), {}, {});
  CHECK(again.a_atl == r.a_atl);
  CHECK(again.atl_runs[3].trace == r.atl_runs[3].trace);
}

TEST_CASE("arm controls") {
  const auto& w = world();
  const auto& spec = w.find(1, 10, 5);
  const auto standard = run_problem(w.index, spec, {}, {});
  const auto identical = run_problem(w.index, spec, {}, {}, ArmInputs::IdenticalAtl);
  CHECK(identical.gain == 0.0);
  const auto swapped = run_problem(w.index, spec, {}, {}, ArmInputs::Swapped);
  CHECK(swapped.gain == -standard.gain);
}

TEST_CASE("errors carry the spec identity") {
  const auto& w = world();
  auto spec = w.find(0, 5, 3);
  spec.train_ids[0].resize(1);
  try {
    run_problem(w.index, spec, {}, {});
    FAIL("expected DegenerateSample");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateSample);
    CHECK(std::string(e.what()).rfind("planted/set0/way5/shot3", 0) == 0);
  }
}

TEST_CASE("experiment, aggregation and reports") {
  const auto& w = world();
  std::vector<EpisodeSpec> subset;
  for (const auto& s : w.specs) {
    if (s.shot == 3 && (s.way == 5 || s.way == 30)) subset.push_back(s);
  }
  auto broken = subset[0];
  broken.set_index = 9;
  broken.train_ids[1].resize(1);
  subset.push_back(broken);

  const auto result = run_experiment(w.index, subset, {}, {}, 2);
  CHECK(result.problems.size() == 11);
  CHECK_FALSE(result.all_succeeded());
  CHECK(result.problems.back().spec.set_index == 9);
  CHECK_FALSE(result.problems.back().result.has_value());
  CHECK(result.problems.back().error.find("set9") != std::string::npos);

  REQUIRE(result.aggregates.size() == 2);
  const auto& agg5 = result.aggregates[0];
  CHECK(agg5.way == 5);
  CHECK(agg5.n_sets == 5);
  CHECK(agg5.n_missing == 1);
  double sum = 0;
  for (const auto& p : result.problems) {
    if (p.result && p.spec.way == 5) sum += p.result->gain;
  }
  CHECK(agg5.mean_gain == doctest::Approx(sum / 5).epsilon(1e-15));
  CHECK(result.aggregates[1].mean_gain >= agg5.mean_gain);

  const auto serial = run_experiment(w.index, subset, {}, {}, 1);
  CHECK(results_csv(serial) == results_csv(result));

  const auto dir = fs::temp_directory_path() / "atl_test_reports";
  fs::remove_all(dir);
  emit_reports(result, dir);
  const auto csv = slurp(dir / "results.csv");
  CHECK(csv.rfind(std::string(kResultsHeader) + "\n", 0) == 0);
  CHECK(lines(csv) == 1 + 10);
  CHECK(lines(slurp(dir / "gain_vs_way.csv")) == 1 + 10);
  CHECK(lines(slurp(dir / "fcl_input_dim.csv")) == 1 + 10);
  CHECK(lines(slurp(dir / "relevance_profiles.csv")) == 1 + 10 * 8);
  CHECK(lines(slurp(dir / "summary.csv")) == 1 + 2);
  CHECK(slurp(dir / "summary.json").find("test") != std::string::npos);

  std::map<std::string, std::string> first;
  for (const auto& e : fs::directory_iterator(dir)) first[e.path().filename()] = slurp(e.path());
  emit_reports(load_experiment(dir / "results.json"), dir);
  for (const auto& [name, text] : first) CHECK_MESSAGE(slurp(dir / name) == text, name);

  std::istringstream rows(slurp(dir / "fcl_input_dim.csv"));
  std::string line;
  std::getline(rows, line);
  CHECK(line == kInputDimPlotHeader);
  while (std::getline(rows, line)) {
    int set, way, shot, nf, dim, pen;
    char c;
    std::istringstream(line) >> set >> c >> way >> c >> shot >> c >> nf >> c >> dim >> c >> pen;
    CHECK(dim == way * nf);
    CHECK(pen == 64);
  }
  fs::remove_all(dir);
  CHECK_THROWS_AS(emit_reports(result, "/proc/atl_cannot_write"), Error);
}

TEST_CASE("sweep grid") {
  const auto& w = world();
  std::vector<EpisodeSpec> family;
  for (const auto& s : w.specs) {
    if (s.way == 5 && s.shot == 3 && s.set_index < 2) family.push_back(s);
  }
  const auto sw = sweep(w.index, family, default_p_max_grid(), default_n_layer_grid(), {}, 1);
  CHECK(sw.cells.size() == 54);
  for (const auto& cell : sw.cells) CHECK(cell.mean_gain > 0.0);

  const SweepCell* def = nullptr;
  for (const auto& cell : sw.cells) {
    if (std::abs(cell.p_max - 0.4) < 1e-12 && cell.n_layer == 3) def = &cell;
  }
  REQUIRE(def != nullptr);
  for (std::size_t i = 0; i < family.size(); ++i) {
    CHECK(def->gains[i] == run_problem(w.index, family[i], {0.4, 3}, {}).gain);
  }

  const auto dir = fs::temp_directory_path() / "atl_test_sweep";
  emit_sweep_report(sw, dir);
  const auto text = slurp(dir / "sweep.csv");
  CHECK(text.rfind(std::string(kSweepHeader) + "\n", 0) == 0);
  CHECK(lines(text) == 55);
  fs::remove_all(dir);
}
