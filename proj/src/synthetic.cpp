#include "atl/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "atl/error.hpp"
#include "atl/rng.hpp"

namespace atl {

void validate(const SyntheticTeacherSpec& spec) {
  if (spec.layer_channels.empty()) fail(ErrorKind::Synthesis, "synthetic teacher needs at least one layer");
  for (int c : spec.layer_channels) {
    if (c < 1) fail(ErrorKind::Synthesis, "synthetic layer with non-positive channel count");
  }
  if (!(spec.bump > 0.0)) fail(ErrorKind::Synthesis, "bump must be positive");
  if (!(spec.noise_scale > 0.0)) fail(ErrorKind::Synthesis, "noise_scale must be positive");
  if (spec.penultimate_dim < 1) fail(ErrorKind::Synthesis, "penultimate_dim must be positive");

  std::map<int, std::set<int>> used;
  for (const auto& [key, channels] : spec.planted) {
    const auto& [layer, name] = key;
    if (layer < 0 || layer >= static_cast<int>(spec.layer_channels.size())) {
      fail(ErrorKind::Synthesis, "planted layer " + std::to_string(layer) + " does not exist");
    }
    for (int c : channels) {
      if (c < 0 || c >= spec.layer_channels[layer]) {
        fail(ErrorKind::Synthesis, "planted channel " + std::to_string(c) + " out of range for layer " +
                                       std::to_string(layer) + " (class '" + name + "')");
      }
      if (!used[layer].insert(c).second) {
        fail(ErrorKind::Synthesis, "channel " + std::to_string(c) + " of layer " + std::to_string(layer) +
                                       " is planted for more than one class");
      }
    }
  }
}

const std::vector<int>& planted_channels(const SyntheticTeacherSpec& spec, int layer, const std::string& class_name) {
  static const std::vector<int> kNone;
  auto it = spec.planted.find({layer, class_name});
  return it == spec.planted.end() ? kNone : it->second;
}

void plant_disjoint(SyntheticTeacherSpec& spec, const std::vector<int>& layers,
                    const std::vector<std::string>& classes, int per_class, std::uint64_t seed) {
  for (int layer : layers) {
    if (layer < 0 || layer >= static_cast<int>(spec.layer_channels.size())) {
      fail(ErrorKind::Synthesis, "cannot plant into missing layer " + std::to_string(layer));
    }
    const int channels = spec.layer_channels[layer];
    if (static_cast<long>(classes.size()) * per_class > channels) {
      fail(ErrorKind::Synthesis, "layer " + std::to_string(layer) + " has too few channels to plant " +
                                     std::to_string(per_class) + " per class");
    }
    std::vector<int> order(channels);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seeding::derive(seed, static_cast<std::uint64_t>(layer)));
    rng.shuffle(order);
    std::size_t next = 0;
    for (const auto& name : classes) {
      auto& slot = spec.planted[{layer, name}];
      slot.assign(order.begin() + next, order.begin() + next + per_class);
      std::sort(slot.begin(), slot.end());
      next += per_class;
    }
  }
}

ActivationCache synthesize_activations(const SyntheticTeacherSpec& spec, int n_per_class,
                                       const std::vector<std::string>& classes, int n_test_per_class) {
  validate(spec);
  if (n_per_class < 1) fail(ErrorKind::Synthesis, "n_per_class must be at least 1");
  if (n_test_per_class < 0) fail(ErrorKind::Synthesis, "n_test_per_class must be non-negative");

  ActivationCache cache;
  cache.model_id = spec.model_id;
  cache.penultimate_dim = spec.penultimate_dim;
  for (std::size_t i = 0; i < spec.layer_channels.size(); ++i) {
    cache.layers.push_back({static_cast<int>(i), "layer_" + std::to_string(i), spec.layer_channels[i]});
  }

  auto make_record = [&](int class_pos, Split split, int i) {
    const auto& name = classes[class_pos];
    ExampleRecord rec;
    rec.example_id = name + "/" + std::string(to_string(split)) + "/" + std::to_string(i);
    rec.label = {class_pos, name};
    rec.split = split;
    Rng rng(seeding::derive(spec.noise_seed, seeding::tag(rec.example_id)));
    for (std::size_t layer = 0; layer < spec.layer_channels.size(); ++layer) {
      std::vector<float> values(spec.layer_channels[layer]);
      for (auto& v : values) v = static_cast<float>(rng.uniform01() * spec.noise_scale);
      for (int c : planted_channels(spec, static_cast<int>(layer), name)) {
        values[c] = static_cast<float>(values[c] + spec.bump);
      }
      rec.lavs.push_back(std::move(values));
    }
    rec.penultimate.resize(spec.penultimate_dim);
    for (auto& v : rec.penultimate) v = static_cast<float>(rng.uniform01() * spec.noise_scale);
    return rec;
  };

  for (int pos = 0; pos < static_cast<int>(classes.size()); ++pos) {
    for (int i = 0; i < n_per_class; ++i) cache.records.push_back(make_record(pos, Split::Train, i));
    for (int i = 0; i < n_test_per_class; ++i) cache.records.push_back(make_record(pos, Split::Test, i));
  }
  validate(cache);
  return cache;
}

}  // namespace atl

namespace atl {

PlantedFixture make_planted_fixture(const PlantedFixtureOptions& options) {
  PlantedFixture f;
  for (int i = 0; i < options.n_classes; ++i) {
    f.classes.push_back(std::string("class_") + (i < 10 ? "0" : "") + std::to_string(i));
  }
  f.spec.model_id = "planted-fixture";
  f.spec.layer_channels = {32, 48, 64, 64, 96, 64, 128, 64};
  f.spec.bump = 10.0;
  f.spec.noise_scale = 1.0;
  f.spec.noise_seed = seeding::derive(options.seed, seeding::tag("noise"));
  f.spec.penultimate_dim = 64;
  f.planted_layers = {2, 4, 6};
  plant_disjoint(f.spec, f.planted_layers, f.classes, 2, seeding::derive(options.seed, seeding::tag("plant")));
  f.cache = synthesize_activations(f.spec, options.train_per_class, f.classes, options.test_per_class);
  return f;
}

}  // namespace atl
