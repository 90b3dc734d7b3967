#include <algorithm>
#include <set>

#include "doctest.h"

#include "atl/episodes.hpp"
#include "atl/error.hpp"
#include "atl/synthetic.hpp"

using namespace atl;

namespace {

DatasetIndex planted_index() { return DatasetIndex::from_cache(make_planted_fixture().cache, "planted"); }

}  // namespace

TEST_CASE("standard grid has 90 problems") {
  const auto index = planted_index();
  const auto specs = synthesize_episodes(index, {});
  CHECK(specs.size() == 90);
  std::set<std::uint64_t> seeds;
  for (const auto& s : specs) {
    CHECK(s.class_pool.size() == 30);
    CHECK(static_cast<int>(s.train_ids.size()) == s.way);
    for (const auto& ids : s.train_ids) CHECK(static_cast<int>(ids.size()) == s.shot);
    seeds.insert(s.seed);
  }
  CHECK(seeds.size() == 90);
  CHECK(synthesize_episodes(index, {}) == specs);

  EpisodeConfig other;
  other.master_seed = 1;
  CHECK(synthesize_episodes(index, other)[0].class_pool != specs[0].class_pool);
}

TEST_CASE("ways nest within a set") {
  const auto specs = synthesize_episodes(planted_index(), {});
  for (const auto& small : specs) {
    for (const auto& big : specs) {
      if (small.set_index != big.set_index || small.shot != big.shot || small.way >= big.way) continue;
      CHECK(small.class_pool == big.class_pool);
      for (int c = 0; c < small.way; ++c) CHECK(small.train_ids[c] == big.train_ids[c]);
    }
  }
}

TEST_CASE("shot draws are distinct training examples of the class") {
  const auto specs = synthesize_episodes(planted_index(), {});
  for (const auto& s : specs) {
    for (int c = 0; c < s.way; ++c) {
      std::set<std::string> ids(s.train_ids[c].begin(), s.train_ids[c].end());
      CHECK(static_cast<int>(ids.size()) == s.shot);
      for (const auto& id : ids) CHECK(id.rfind(s.class_pool[c] + "/train/", 0) == 0);
    }
  }
}

TEST_CASE("episode errors") {
  const auto small = DatasetIndex::from_cache(make_planted_fixture({20, 10, 2, 7}).cache, "small");
  try {
    synthesize_episodes(small, {});
    FAIL("expected Synthesis");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Synthesis);
  }
  const auto few_shots = DatasetIndex::from_cache(make_planted_fixture({30, 4, 2, 7}).cache, "few");
  try {
    synthesize_episodes(few_shots, {});
    FAIL("expected Synthesis");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Synthesis);
    CHECK(std::string(e.what()).find("class_") != std::string::npos);
  }
  EpisodeConfig bad;
  bad.ways = {40};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.n_sets = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}
