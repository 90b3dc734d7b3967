#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "atl/activation.hpp"

namespace atl {

/// Synthetic teacher: every channel is uniform noise in [0, noise_scale); the
/// channels planted for a class get +bump on that class's records. The
/// penultimate vector is pure noise.
struct SyntheticTeacherSpec {
  std::string model_id = "synthetic-teacher";
  std::vector<int> layer_channels;
  /// (layer index, class name) -> planted channel indices.
  std::map<std::pair<int, std::string>, std::vector<int>> planted;
  double bump = 10.0;
  std::uint64_t noise_seed = 0;
  double noise_scale = 1.0;
  int penultimate_dim = 64;
};

/// Throws Synthesis on out-of-range or overlapping planted channels.
void validate(const SyntheticTeacherSpec& spec);

/// Records are "<class>/train/<i>" then "<class>/test/<i>", class-major in
/// the order of `classes`; label ids are positions in `classes`. Noise is
/// seeded per example id, so a record's values do not depend on its siblings.
ActivationCache synthesize_activations(const SyntheticTeacherSpec& spec, int n_per_class,
                                       const std::vector<std::string>& classes, int n_test_per_class = 0);

/// Plants `per_class` disjoint channels for every class in each listed layer,
/// at seeded positions.
void plant_disjoint(SyntheticTeacherSpec& spec, const std::vector<int>& layers,
                    const std::vector<std::string>& classes, int per_class, std::uint64_t seed);

/// Channels of `layer` planted for `class_name` (empty if none).
const std::vector<int>& planted_channels(const SyntheticTeacherSpec& spec, int layer, const std::string& class_name);

}  // namespace atl

namespace atl {

struct PlantedFixtureOptions {
  int n_classes = 30;
  int train_per_class = 10;
  int test_per_class = 10;
  std::uint64_t seed = 7;
};

struct PlantedFixture {
  SyntheticTeacherSpec spec;
  std::vector<std::string> classes;
  std::vector<int> planted_layers;
  ActivationCache cache;
};

/// Eight layers (32/48/64/64/96/64/128/64 channels); layers 2, 4 and 6 carry
/// two planted channels per class with bump 10 over unit noise; the 64-wide
/// penultimate vector is noise only. Classes are "class_00", "class_01", ...
PlantedFixture make_planted_fixture(const PlantedFixtureOptions& options = {});

}  // namespace atl
