// Acceptance checks: one PASS/FAIL/SKIP line per criterion, exit code 1 on
// any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "atl/cache_io.hpp"
#include "atl/error.hpp"
#include "atl/fcl.hpp"
#include "atl/harness.hpp"
#include "atl/reports.hpp"
#include "atl/rng.hpp"
#include "atl/selection.hpp"
#include "atl/stats.hpp"
#include "atl/synthetic.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace atl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum { Pass, Fail, Skip } status = Fail;
  std::string detail;
};

int failures = 0;
int expected_failures = 0;
std::set<std::string> expected_fail;

void report(const std::string& name, double limit_s, const std::function<Outcome()>& check) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {Outcome::Fail, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (o.status == Outcome::Pass && limit_s > 0 && secs >= limit_s) {
    o.status = Outcome::Fail;
    o.detail += " (over the time limit)";
  }
  const char* tag = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Skip ? "SKIP" : "FAIL";
  if (o.status == Outcome::Fail) ++(expected_fail.count(name) ? expected_failures : failures);
  char timing[64];
  std::snprintf(timing, sizeof timing, " [%.2f s%s]", secs, limit_s > 0 ? "" : ", no limit");
  std::cout << tag << " " << name << ": " << o.detail << timing << std::endl;
}

Outcome verdict(bool ok, const std::string& detail) { return {ok ? Outcome::Pass : Outcome::Fail, detail}; }

std::string fmt(const char* f, double a, double b = 0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

Outcome welch_oracle() {
  Rng rng(seeding::tag("welch"));
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> a(2 + rng.below(29)), b(2 + rng.below(29));
    const double shift = rng.uniform(-2, 2), scale = rng.uniform(0.1, 5);
    for (auto& v : a) v = rng.uniform(-1, 1);
    for (auto& v : b) v = shift + scale * rng.uniform(-1, 1);
    worst = std::max(worst, std::fabs(welch_t_p_value(a, b) - oracle::welch_p(a, b)));
  }
  return verdict(worst <= 1e-9, fmt("1000 pairs, max |dp| = %.3g (limit 1e-9)", worst));
}

Outcome relevance_invariants() {
  Rng rng(seeding::tag("relevance"));
  double worst_scale = 0, worst_perm = 0, worst_oracle = 0;
  int zero_cases = 0, iff_violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(5));
    const int n = 1 + static_cast<int>(rng.below(5));
    std::vector<int> channels(1 + rng.below(3));
    for (auto& c : channels) c = 2 + static_cast<int>(rng.below(9));
    auto cache = testing_support::random_cache(rng, channels, k, n);
    // Integer-valued LAVs keep every scaled copy exactly representable in float.
    for (auto& rec : cache.records) {
      for (auto& lav : rec.lavs) {
        for (auto& v : lav) v = static_cast<float>(rng.below(1024));
      }
      if (rng.below(10) == 0) std::fill(rec.lavs[0].begin(), rec.lavs[0].end(), 0.0f);
    }
    const bool duplicate = trial % 4 == 0;
    if (duplicate) {
      for (int i = 0; i < n; ++i) cache.records[n + i].lavs = cache.records[i].lavs;
    }
    const auto groups = testing_support::groups_of(cache);
    const auto base = profile_layers(cache, groups);

    for (std::size_t l = 0; l < channels.size(); ++l) {
      std::vector<std::vector<long double>> cents;
      std::vector<ClassCentroid> lib;
      for (const auto& g : groups) {
        std::vector<std::vector<float>> rows;
        std::vector<std::span<const float>> spans;
        for (const auto* r : g.examples) {
          rows.push_back(r->lavs[l]);
          spans.push_back(r->lavs[l]);
        }
        cents.push_back(oracle::centroid(rows));
        lib.push_back(class_centroid(cache.layers[l], spans, g.label));
      }
      const auto ref = oracle::pairwise(cents);
      worst_oracle = std::max({worst_oracle, std::fabs(ref.min - base[l].r_min), std::fabs(ref.mean - base[l].r_mean),
                               std::fabs(ref.max - base[l].r_max)});
      bool coincide = false;
      for (std::size_t i = 0; i < lib.size(); ++i) {
        for (std::size_t j = i + 1; j < lib.size(); ++j) coincide |= lib[i].vector == lib[j].vector;
      }
      if (coincide != (base[l].r_min == 0.0)) ++iff_violations;
      if (duplicate && l == 0) zero_cases += base[l].r_min == 0.0;
    }

    auto scaled = cache;
    for (auto& rec : scaled.records) {
      const float c = static_cast<float>(1 + rng.below(4095)) / static_cast<float>(1u << rng.below(13));
      for (auto& lav : rec.lavs) {
        for (auto& v : lav) v *= c;
      }
    }
    const auto after_scale = profile_layers(scaled, testing_support::groups_of(scaled));

    auto permuted = cache;
    std::vector<int> relabel(k);
    std::iota(relabel.begin(), relabel.end(), 0);
    rng.shuffle(relabel);
    for (auto& rec : permuted.records) {
      rec.label.id = relabel[rec.label.id];
      rec.label.name = "c" + std::to_string(rec.label.id);
    }
    rng.shuffle(permuted.records);
    const auto after_perm = profile_layers(permuted, testing_support::groups_of(permuted));

    for (std::size_t l = 0; l < base.size(); ++l) {
      worst_scale = std::max({worst_scale, std::fabs(after_scale[l].r_min - base[l].r_min),
                              std::fabs(after_scale[l].r_mean - base[l].r_mean),
                              std::fabs(after_scale[l].r_max - base[l].r_max)});
      worst_perm = std::max(worst_perm, std::fabs(after_perm[l].r_min - base[l].r_min));
    }
  }
  const bool ok = worst_scale <= 1e-12 && worst_perm <= 1e-12 && worst_oracle <= 1e-12 && iff_violations == 0 &&
                  zero_cases == 50;
  std::ostringstream d;
  d << "200 caches, scaling max diff " << worst_scale << ", permutation max diff " << worst_perm
    << ", oracle max diff " << worst_oracle << ", r_min=0 iff coincident centroids (" << iff_violations
    << " violations, " << zero_cases << "/50 duplicated-class caches at 0)";
  return verdict(ok, d.str());
}

Outcome quota_exactness() {
  Rng rng(seeding::tag("quota"));
  int quota_errors = 0, oracle_mismatch = 0, monotone_breaks = 0, degraded = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(7));
    const int n_layers = 1 + static_cast<int>(rng.below(6));
    std::vector<LayerRelevance> profiles;
    std::vector<MapScore> scores;
    for (int l = 0; l < n_layers; ++l) {
      const LayerId layer{l, "l" + std::to_string(l), k + static_cast<int>(rng.below(12))};
      const double r = rng.uniform(0.05, 1.5);
      profiles.push_back({layer, r, r, r});
      for (int ch = 0; ch < layer.channels; ++ch) {
        MapScore s{layer, ch, std::vector<double>(k), 1.0, {}};
        for (auto& p : s.p_per_class) p = rng.uniform(0.2, 1.0);
        if (rng.below(3) == 0) s.p_per_class[rng.below(k)] = rng.uniform01() * 0.3;
        const auto it = std::min_element(s.p_per_class.begin(), s.p_per_class.end());
        s.p_min = *it;
        const int id = static_cast<int>(it - s.p_per_class.begin());
        s.argmin_class = {id, "c" + std::to_string(id)};
        scores.push_back(s);
      }
    }
    std::vector<ClassLabel> labels;
    for (int c = 0; c < k; ++c) labels.push_back({c, "c" + std::to_string(c)});
    const int n_layer = 1 + static_cast<int>(rng.below(n_layers));
    const auto ranking = rank_layers(profiles, n_layer);
    std::vector<MapScore> selected_scores;
    for (const auto& s : scores) {
      for (const auto& l : ranking.selected) {
        if (l.index == s.layer.index) selected_scores.push_back(s);
      }
    }

    int prev = 0;
    for (int step = 1; step <= 20; ++step) {
      const double p_max = 0.05 * step;
      const auto sel = balance_selection(selected_scores, ranking, {p_max, n_layer}, labels);
      std::map<int, int> per_class;
      std::set<std::pair<int, int>> unique;
      for (const auto& e : sel.entries) {
        ++per_class[e.assigned_class.id];
        unique.insert({e.layer.index, e.channel});
      }
      bool exact = static_cast<int>(sel.entries.size()) == k * sel.n_feature &&
                   static_cast<int>(unique.size()) == k * sel.n_feature && sel.fcl_input_dim == k * sel.n_feature &&
                   static_cast<int>(per_class.size()) == k;
      for (auto [c, count] : per_class) exact &= count == sel.n_feature;
      quota_errors += !exact;
      const int want = oracle::expected_n_feature(selected_scores, ranking, p_max, k);
      if (sel.degraded) {
        ++degraded;
        oracle_mismatch += !(want == 0 && sel.n_feature == 1);
      } else {
        oracle_mismatch += want != sel.n_feature;
      }
      monotone_breaks += sel.n_feature < prev;
      prev = sel.n_feature;
    }
  }
  std::ostringstream d;
  d << "200 score sets x 20 p_max values: " << quota_errors << " quota violations, " << oracle_mismatch
    << " N_feature mismatches vs oracle, " << monotone_breaks << " monotonicity breaks (" << degraded
    << " fallback selections)";
  return verdict(quota_errors == 0 && oracle_mismatch == 0 && monotone_breaks == 0, d.str());
}

Outcome gradient_check() {
  Rng rng(seeding::tag("gradient"));
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const bool mlp = trial % 2 == 1;
    const int rows = 3 + static_cast<int>(rng.below(10));
    FeatureMatrix data;
    data.values.resize(rows, 7);
    std::vector<std::vector<double>> x(rows, std::vector<double>(7));
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < 7; ++j) x[i][j] = data.values(i, j) = rng.uniform(-2, 2);
      data.labels.push_back(static_cast<int>(rng.below(5)));
    }
    data.num_classes = 5;
    const HeadShape shape{mlp ? HeadKind::Mlp : HeadKind::Linear, 7, mlp ? 8 : 0, 5};
    auto params = init_params(shape, rng.next());
    for (auto& p : params) p += rng.uniform(-0.5, 0.5);
    std::vector<double> grad(params.size());
    softmax_cross_entropy(shape, params, data, grad);
    const auto fd = oracle::numeric_gradient(params, x, data.labels, 5, shape.hidden, 1e-5);
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      diff += (grad[i] - fd[i]) * (grad[i] - fd[i]);
      na += grad[i] * grad[i];
      nb += fd[i] * fd[i];
    }
    worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(std::max(na, nb)), 1e-12));
  }
  return verdict(worst <= 1e-4, fmt("50 instances (25 linear, 25 mlp), max relative error %.3g (limit 1e-4)", worst));
}

Outcome planted_end_to_end() {
  const auto fx = make_planted_fixture();
  const CacheIndex index(fx.cache);
  EpisodeConfig ec;
  ec.ways = {5, 30};
  ec.shots = {3};
  const auto specs = synthesize_episodes(DatasetIndex::from_cache(fx.cache, "planted"), ec);

  struct Tally {
    std::size_t planted = 0, recovered = 0, displaced = 0;
    std::vector<double> gains;
  };
  std::map<int, Tally> by_way;
  std::size_t p_mismatch = 0, planted_layers_missed = 0;
  for (const auto& spec : specs) {
    auto& tally = by_way[spec.way];
    const auto data = episode_data(index, spec);
    const auto ranking = rank_layers(profile_layers(fx.cache, data.train), 3);
    const auto scores = score_maps(fx.cache, data.train, ranking.selected);
    std::vector<ClassLabel> labels;
    for (const auto& g : data.train) labels.push_back(g.label);
    const auto sel = balance_selection(scores, ranking, {}, labels);

    std::set<std::pair<int, int>> chosen;
    std::map<int, double> worst_kept;  // per class: largest p among its selected maps
    for (const auto& e : sel.entries) {
      chosen.insert({e.layer.index, e.channel});
      worst_kept[e.assigned_class.id] = std::max(worst_kept[e.assigned_class.id], e.p_min);
    }
    for (const auto& layer : ranking.selected) {
      const auto ref = oracle::one_vs_rest(fx.cache, data.train, layer.index);
      for (const auto& e : sel.entries) {
        if (e.layer.index != layer.index) continue;
        p_mismatch += std::fabs(e.p_min - ref[e.channel].p_min) > 1e-9 || e.assigned_class.id != ref[e.channel].argmin;
      }
      for (const auto& cls : spec.classes()) {
        for (int ch : planted_channels(fx.spec, layer.index, cls)) {
          ++tally.planted;
          if (chosen.count({layer.index, ch})) {
            ++tally.recovered;
          } else if (ref[ch].p_min >= worst_kept[ref[ch].argmin]) {
            // every map the quota kept for this class has a smaller oracle p-value
            ++tally.displaced;
          }
        }
      }
    }
    for (int pl : fx.planted_layers) {
      bool found = false;
      for (const auto& l : ranking.selected) found |= l.index == pl;
      planted_layers_missed += !found;
    }
    tally.gains.push_back(run_problem(index, spec, {}, {}).gain);
  }

  bool ok = p_mismatch == 0 && planted_layers_missed == 0;
  std::ostringstream d;
  d << "5 sets per setting;";
  for (const auto& [way, t] : by_way) {
    const double recovery = t.planted ? static_cast<double>(t.recovered) / t.planted : 0.0;
    const double gain = std::accumulate(t.gains.begin(), t.gains.end(), 0.0) / t.gains.size();
    ok = ok && t.planted > 0 && recovery >= 0.95 && gain >= 0.10;
    d << " " << way << "-way/3-shot recovery " << t.recovered << "/" << t.planted << " = " << 100 * recovery
      << "% (limit 95%; misses outranked by every kept map of their class: " << t.displaced << "/"
      << t.planted - t.recovered << "), mean gain " << 100 * gain << " pts (limit +10);";
  }
  d << " selected p-values off the oracle: " << p_mismatch << ", planted layers unselected: " << planted_layers_missed;
  return verdict(ok, d.str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "atl_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = ATL_CLI_PATH;
  const std::string cache = (dir / "planted.cache").string();
  auto sh = [](const std::string& cmd) { return std::system((cmd + " > /dev/null").c_str()); };
  if (sh(cli + " synth --cache " + cache) != 0) return {Outcome::Fail, "synth failed"};
  const int a = sh(cli + " run --cache " + cache + " --seed 11 --workers 1 --out " + (dir / "a").string());
  const int b = sh(cli + " run --cache " + cache + " --seed 11 --workers 2 --out " + (dir / "b").string());
  if (a != 0 || b != 0) return {Outcome::Fail, "run exited non-zero"};
  const auto ra = slurp(dir / "a" / "results.csv");
  const auto rb = slurp(dir / "b" / "results.csv");
  const auto rows = std::count(ra.begin(), ra.end(), '\n') - 1;
  const bool same = !ra.empty() && ra == rb;
  const bool reports_same = slurp(dir / "a" / "results.json") == slurp(dir / "b" / "results.json");
  fs::remove_all(dir);
  return verdict(same && reports_same && rows == 90,
                 "two `atl run` executions (master seed 11, 1 vs 2 workers): results.csv " +
                     std::string(same ? "byte-identical" : "DIFFERS") + " over " + std::to_string(rows) + " rows");
}

Outcome identical_control() {
  const auto fx = make_planted_fixture();
  const CacheIndex index(fx.cache);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EpisodeConfig ec;
    ec.ways = {5};
    ec.shots = {3};
    ec.n_sets = 1;
    ec.master_seed = seed;
    const auto spec = synthesize_episodes(DatasetIndex::from_cache(fx.cache, "planted"), ec).front();
    worst = std::max(worst, std::fabs(run_problem(index, spec, {}, {}, ArmInputs::IdenticalAtl).gain));
  }
  return verdict(worst <= 0.02, fmt("5 seeds, max |G| = %.3g points (limit 2)", 100 * worst));
}

Outcome real_data_sign() {
  const char* path = std::getenv("ATL_CUB_CACHE");
  if (!path || !*path) return {Outcome::Skip, "set ATL_CUB_CACHE to an extracted CUB cache to run"};
  const auto cache = read_cache(path);
  const CacheIndex index(cache);
  EpisodeConfig ec;
  ec.ways = {30};
  ec.shots = {3};
  const auto specs = synthesize_episodes(DatasetIndex::from_cache(cache, "cub"), ec);
  const auto result = run_experiment(index, specs, {}, {}, static_cast<int>(std::thread::hardware_concurrency()));
  double sum = 0;
  int n = 0, positive = 0;
  for (const auto& p : result.problems) {
    if (!p.result) continue;
    sum += p.result->gain;
    positive += p.result->gain > 0;
    ++n;
  }
  std::ostringstream d;
  d << n << " sets, mean gain " << 100 * sum / std::max(n, 1) << " pts, " << positive << " positive";
  return verdict(n == 5 && sum > 0, d.str());
}

Outcome input_size_report() {
  const auto fx = make_planted_fixture();
  const CacheIndex index(fx.cache);
  EpisodeConfig ec;
  ec.shots = {3};
  ec.n_sets = 1;
  const auto specs = synthesize_episodes(DatasetIndex::from_cache(fx.cache, "planted"), ec);
  const auto result = run_experiment(index, specs, {}, {});
  const fs::path dir = fs::temp_directory_path() / "atl_acceptance_inputdim";
  fs::remove_all(dir);
  emit_reports(result, dir);

  std::istringstream rows(slurp(dir / "fcl_input_dim.csv"));
  fs::remove_all(dir);
  std::string line;
  std::getline(rows, line);
  if (line != kInputDimPlotHeader) return {Outcome::Fail, "unexpected header: " + line};
  int checked = 0, wrong = 0;
  std::ostringstream sample;
  while (std::getline(rows, line)) {
    int set, way, shot, nf, dim, pen;
    char c;
    std::istringstream(line) >> set >> c >> way >> c >> shot >> c >> nf >> c >> dim >> c >> pen;
    const auto& spec = specs[checked];
    const auto data = episode_data(index, spec);
    const auto ranking = rank_layers(profile_layers(fx.cache, data.train), 3);
    std::vector<ClassLabel> labels;
    for (const auto& g : data.train) labels.push_back(g.label);
    const auto sel =
        balance_selection(score_maps(fx.cache, data.train, ranking.selected), ranking, {}, labels);
    std::map<int, int> per_class;
    for (const auto& e : sel.entries) ++per_class[e.assigned_class.id];
    int sum = 0;
    for (auto [cls, count] : per_class) sum += count;
    wrong += way != spec.way || dim != sum || dim != way * nf || pen != fx.cache.penultimate_dim;
    sample << " " << way << "-way " << dim << " vs " << pen << ";";
    ++checked;
  }
  return verdict(checked == 6 && wrong == 0, std::to_string(checked) + " rows, fcl_input_dim = sum of per-class quota, " +
                                                 std::to_string(wrong) + " mismatches;" + sample.str());
}

}  // namespace

// --expected-fail=<name> records a criterion known to fail (see README); it
// still prints FAIL but does not change the exit status.
int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--expected-fail=", 0) == 0) expected_fail.insert(arg.substr(16));
  }
  report("statistical oracle equivalence", 5, welch_oracle);
  report("relevance invariants", 10, relevance_invariants);
  report("quota exactness", 5, quota_exactness);
  report("gradient check", 10, gradient_check);
  report("planted-feature end-to-end", 60, planted_end_to_end);
  report("determinism", 0, determinism);
  report("identical-inputs control", 0, identical_control);
  report("real-data sign check", 0, real_data_sign);
  report("fcl input-size report", 0, input_size_report);
  std::cout << "acceptance: " << failures << " unexpected failure(s), " << expected_failures
            << " expected failure(s)" << std::endl;
  return failures == 0 ? 0 : 1;
}
