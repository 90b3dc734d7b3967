#include "atl/selection.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <tuple>

#include "atl/error.hpp"
#include "atl/format.hpp"
#include "atl/stats.hpp"

namespace atl {

void SelectionConfig::validate() const {
  if (!(p_max > 0.0 && p_max <= 1.0)) fail(ErrorKind::Config, "p_max must be in (0, 1], got " + exact(p_max));
  if (n_layer <= 0) fail(ErrorKind::Config, "n_layer must be positive, got " + std::to_string(n_layer));
}

double layer_threshold(double r_l, double r_max, double p_max) {
  if (!(r_max > 0.0)) {
    fail(ErrorKind::DegenerateRelevance, "maximum relevance is zero: class centroids coincide in every layer");
  }
  return p_max * r_l / r_max;
}

std::vector<MapScore> score_maps(const ActivationCache& cache, std::span<const ClassGroup> groups,
                                 std::span<const LayerId> layers) {
  std::size_t total = 0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (groups[gi].label.id != static_cast<int>(gi)) {
      fail(ErrorKind::InvalidInput, "class groups must be ordered by dense label id");
    }
    total += groups[gi].examples.size();
  }
  for (const auto& g : groups) {
    if (g.examples.size() < 2) {
      fail(ErrorKind::DegenerateSample, "class '" + g.label.name + "' has " + std::to_string(g.examples.size()) +
                                            " training examples; the t-test needs at least 2");
    }
    if (total - g.examples.size() < 2) {
      fail(ErrorKind::DegenerateSample, "the rest pool for class '" + g.label.name + "' has fewer than 2 examples");
    }
  }

  std::vector<MapScore> scores;
  std::vector<double> in_class;
  std::vector<double> rest;
  for (const auto& layer : layers) {
    if (layer.index < 0 || static_cast<std::size_t>(layer.index) >= cache.layers.size()) {
      fail(ErrorKind::Schema, "layer '" + layer.name + "' is not in the cache");
    }
    const auto li = static_cast<std::size_t>(layer.index);
    for (int ch = 0; ch < layer.channels; ++ch) {
      MapScore score{layer, ch, std::vector<double>(groups.size(), 1.0), 1.0, {}};
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        in_class.clear();
        rest.clear();
        for (std::size_t gj = 0; gj < groups.size(); ++gj) {
          auto& sink = gi == gj ? in_class : rest;
          for (const auto* rec : groups[gj].examples) sink.push_back(rec->lav(li)[static_cast<std::size_t>(ch)]);
        }
        score.p_per_class[gi] = welch_t_p_value(in_class, rest);
      }
      std::size_t best = 0;
      for (std::size_t gi = 1; gi < groups.size(); ++gi) {
        const double p = score.p_per_class[gi];
        if (p < score.p_per_class[best] ||
            (p == score.p_per_class[best] && groups[gi].label.id < groups[best].label.id)) {
          best = gi;
        }
      }
      score.p_min = score.p_per_class[best];
      score.argmin_class = groups[best].label;
      scores.push_back(std::move(score));
    }
  }
  return scores;
}

namespace {

bool by_p_then_position(const SelectedEntry& a, const SelectedEntry& b) {
  return std::tie(a.p_min, a.layer.index, a.channel) < std::tie(b.p_min, b.layer.index, b.channel);
}

bool by_position(const SelectedEntry& a, const SelectedEntry& b) {
  return std::tie(a.layer.index, a.channel) < std::tie(b.layer.index, b.channel);
}

}  // namespace

SelectedFeatureSet balance_selection(std::span<const MapScore> scores, const LayerRanking& ranking,
                                     const SelectionConfig& config, std::span<const ClassLabel> labels) {
  config.validate();
  if (ranking.selected.empty()) fail(ErrorKind::Config, "no layers selected");

  std::map<int, double> r_min_of;
  for (const auto& r : ranking.ordered) r_min_of[r.layer.index] = r.r_min;
  std::map<int, double> threshold_of;
  std::map<int, int> seen_channels;
  for (const auto& layer : ranking.selected) {
    threshold_of[layer.index] = layer_threshold(r_min_of.at(layer.index), ranking.r_max_global, config.p_max);
    seen_channels[layer.index] = 0;
  }

  // Classes are identified by the label ids appearing in the scores.
  std::map<int, ClassLabel> classes;
  std::vector<const MapScore*> in_scope;
  for (const auto& s : scores) {
    auto it = seen_channels.find(s.layer.index);
    if (it == seen_channels.end()) continue;
    ++it->second;
    in_scope.push_back(&s);
    classes.emplace(s.argmin_class.id, s.argmin_class);
  }
  for (const auto& l : labels) classes.insert_or_assign(l.id, l);
  for (const auto& layer : ranking.selected) {
    if (seen_channels[layer.index] != layer.channels) {
      fail(ErrorKind::InvalidInput, "scores do not cover every channel of layer '" + layer.name + "'");
    }
  }
  std::size_t k = 0;
  for (const auto* s : in_scope) k = std::max(k, s->p_per_class.size());

  std::map<int, std::vector<SelectedEntry>> per_class;
  for (std::size_t c = 0; c < k; ++c) per_class[static_cast<int>(c)];
  for (const auto* s : in_scope) {
    const double threshold = threshold_of.at(s->layer.index);
    if (s->p_min < threshold) {
      per_class[s->argmin_class.id].push_back({s->layer, s->channel, s->argmin_class, s->p_min, threshold});
    }
  }

  SelectedFeatureSet out;
  std::size_t n_feature = SIZE_MAX;
  for (const auto& [id, cands] : per_class) n_feature = std::min(n_feature, cands.size());
  if (per_class.empty()) n_feature = 0;

  if (n_feature > 0) {
    for (auto& [id, cands] : per_class) {
      std::sort(cands.begin(), cands.end(), by_p_then_position);
      out.entries.insert(out.entries.end(), cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(n_feature));
    }
    out.n_feature = static_cast<int>(n_feature);
  } else {
    // Threshold dropped: every map goes to its argmin class and each class
    // keeps its best one. A class that is nobody's argmin takes the unused
    // map with its own smallest p-value.
    out.degraded = true;
    out.n_feature = 1;
    std::map<int, std::vector<SelectedEntry>> attributed;
    for (const auto* s : in_scope) {
      attributed[s->argmin_class.id].push_back(
          {s->layer, s->channel, s->argmin_class, s->p_min, threshold_of.at(s->layer.index)});
    }
    std::set<std::pair<int, int>> used;
    std::vector<int> orphans;
    for (std::size_t c = 0; c < k; ++c) {
      const int id = static_cast<int>(c);
      auto it = attributed.find(id);
      if (it == attributed.end()) {
        orphans.push_back(id);
        continue;
      }
      auto best = *std::min_element(it->second.begin(), it->second.end(), by_p_then_position);
      used.insert({best.layer.index, best.channel});
      out.entries.push_back(best);
    }
    for (int id : orphans) {
      const MapScore* pick = nullptr;
      for (const auto* s : in_scope) {
        if (used.count({s->layer.index, s->channel})) continue;
        const double p = s->p_per_class[static_cast<std::size_t>(id)];
        if (!pick || p < pick->p_per_class[static_cast<std::size_t>(id)]) pick = s;
      }
      if (!pick) fail(ErrorKind::InvalidInput, "fewer maps than classes in the selected layers");
      used.insert({pick->layer.index, pick->channel});
      ClassLabel label = classes.count(id) ? classes.at(id) : ClassLabel{id, "class_" + std::to_string(id)};
      out.entries.push_back({pick->layer, pick->channel, label, pick->p_per_class[static_cast<std::size_t>(id)],
                             threshold_of.at(pick->layer.index)});
    }
  }
  std::sort(out.entries.begin(), out.entries.end(), by_position);
  out.fcl_input_dim = static_cast<int>(out.entries.size());
  return out;
}

void write_selection_csv(std::ostream& out, const SelectedFeatureSet& selection) {
  out << "layer_index,layer_name,channel,assigned_class,p_min,threshold\n";
  for (const auto& e : selection.entries) {
    out << e.layer.index << ',' << e.layer.name << ',' << e.channel << ',' << e.assigned_class.name << ','
        << exact(e.p_min) << ',' << exact(e.threshold) << '\n';
  }
  out << "# n_feature=" << selection.n_feature << ",fcl_input_dim=" << selection.fcl_input_dim
      << ",degraded=" << (selection.degraded ? "true" : "false") << '\n';
}

}  // namespace atl
