#include <algorithm>
#include <cmath>
#include <queue>
#include <set>

#include "clopa/errors.hpp"
#include "json.hpp"
#include "clopa/synthdata.hpp"
#include "doctest.h"
#include "support/fixtures.hpp"

using namespace clopa;

namespace {

// Number of 26-connected foreground components, by breadth-first flood fill.
int components26(const Mask& m) {
  const Extents e = m.extents;
  std::vector<char> seen(m.data.size(), 0);
  int count = 0;
  for (int z = 0; z < e.d; ++z)
    for (int y = 0; y < e.h; ++y)
      for (int x = 0; x < e.w; ++x) {
        const auto i = static_cast<std::size_t>(e.index(z, y, x));
        if (!m.data[i] || seen[i]) continue;
        ++count;
        std::queue<Voxel> q;
        q.push({z, y, x});
        seen[i] = 1;
        while (!q.empty()) {
          const Voxel v = q.front();
          q.pop();
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int a = v.z + dz, b = v.y + dy, c = v.x + dx;
                if (a < 0 || b < 0 || c < 0 || a >= e.d || b >= e.h || c >= e.w) continue;
                const auto j = static_cast<std::size_t>(e.index(a, b, c));
                if (m.data[j] && !seen[j]) {
                  seen[j] = 1;
                  q.push({a, b, c});
                }
              }
        }
      }
  return count;
}

double fraction(const Mask& m) {
  return static_cast<double>(std::count(m.data.begin(), m.data.end(), 1)) / static_cast<double>(m.data.size());
}

TaskSpec spec_for(Geometry g) {
  TaskSpec s;
  s.geometry = g;
  s.extents = {32, 32, 32};
  if (g == Geometry::LowContrastBlob) s.contrast = 1.0;
  return s;
}

}  // namespace

TEST_SUITE("synthdata") {

TEST_CASE("same spec and seed give identical samples") {
  for (auto g : {Geometry::Blob, Geometry::SmallPair, Geometry::BranchingTree, Geometry::LowContrastBlob}) {
    const auto s = spec_for(g);
    const Sample a = generate_sample(s, 3, 99), b = generate_sample(s, 3, 99), c = generate_sample(s, 3, 100);
    CHECK(a.gt == b.gt);
    CHECK(a.image == b.image);
    CHECK(a.image != c.image);
  }
}

TEST_CASE("branching tree: volume fraction band and one 26-connected component over 100 samples") {
  const auto s = spec_for(Geometry::BranchingTree);
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const Sample smp = generate_sample(s, seed, seed * 7919);
    const double f = fraction(smp.gt);
    CHECK(f >= 0.005);
    CHECK(f <= 0.02);
    CHECK(components26(smp.gt) == 1);
  }
}

TEST_CASE("every geometry: nonempty, finite, in band, contrast within 20%") {
  for (auto g : {Geometry::Blob, Geometry::SmallPair, Geometry::BranchingTree, Geometry::LowContrastBlob}) {
    const auto s = spec_for(g);
    const auto band = fraction_band(g);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const Sample smp = generate_sample(s, seed, seed);
      const double f = fraction(smp.gt);
      CHECK(f > 0.0);
      CHECK(f >= band.lo);
      CHECK(f <= band.hi);
      double fg = 0, bg = 0;
      std::size_t nf = 0, nb = 0;
      for (std::size_t i = 0; i < smp.gt.data.size(); ++i) {
        REQUIRE(std::isfinite(smp.image.data[i]));
        if (smp.gt.data[i]) fg += smp.image.data[i], ++nf;
        else bg += smp.image.data[i], ++nb;
      }
      const double gap = fg / static_cast<double>(nf) - bg / static_cast<double>(nb);
      CHECK(gap == doctest::Approx(s.contrast * kNoiseSigma).epsilon(0.2));
    }
  }
}

TEST_CASE("small pair: two separate spheres") {
  const auto s = spec_for(Geometry::SmallPair);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) CHECK(components26(generate_sample(s, 0, seed).gt) == 2);
}

TEST_CASE("task split: 40 gives 20/20, disjoint and exhaustive") {
  auto s = fixture::tiny_spec(40);
  const Dataset ds = generate_task(s, 5);
  CHECK(ds.samples.size() == 40);
  CHECK(ds.train.size() == 20);
  CHECK(ds.holdout.size() == 20);
  CHECK(std::is_sorted(ds.train.begin(), ds.train.end()));
  CHECK(std::is_sorted(ds.holdout.begin(), ds.holdout.end()));
  std::set<std::uint64_t> all(ds.train.begin(), ds.train.end());
  all.insert(ds.holdout.begin(), ds.holdout.end());
  CHECK(all.size() == 40);
  CHECK(*all.rbegin() == 39);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) CHECK(ds.samples[i].id == i);

  const Dataset odd = generate_task(fixture::tiny_spec(7), 5);
  CHECK(odd.train.size() == 3);
  CHECK(odd.holdout.size() == 4);
}

TEST_CASE("different master seeds change content but not split sizes") {
  const auto s = fixture::tiny_spec(10);
  const Dataset a = generate_task(s, 1), b = generate_task(s, 2);
  CHECK(a.train.size() == b.train.size());
  CHECK(a.holdout.size() == b.holdout.size());
  CHECK(a.samples[0].image != b.samples[0].image);
  CHECK(a.samples[0].seed == sample_seed(1, 0));
}

TEST_CASE("datasets round-trip through disk with stable bytes") {
  const auto dir = fixture::scratch_dir("synth_roundtrip") / "nested" / "ds";
  auto s = fixture::tiny_spec(6);
  s.spacing = {1.0, 1.0, 4.0};
  const Dataset ds = generate_task(s, 11);
  save_dataset(dir, ds);
  const Dataset back = load_dataset(dir);
  CHECK(back.master_seed == 11);
  CHECK(back.train == ds.train);
  CHECK(back.holdout == ds.holdout);
  CHECK(task_spec_to_json(back.spec) == task_spec_to_json(ds.spec));
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].gt == ds.samples[i].gt);
    CHECK(back.samples[i].image == ds.samples[i].image);
    CHECK(back.samples[i].seed == ds.samples[i].seed);
  }

  const auto first = fixture::slurp(dir / "task.json");
  const auto vol = fixture::slurp(dir / "volumes" / "sample_0003_image.clvx");
  CHECK(vol.substr(0, 4) == "CLVX");
  save_dataset(dir, generate_task(s, 11));
  CHECK(fixture::slurp(dir / "task.json") == first);
  CHECK(fixture::slurp(dir / "volumes" / "sample_0003_image.clvx") == vol);
}

TEST_CASE("task spec errors name the offending key") {
  auto bad = [](const std::string& key, auto value) {
    auto j = nlohmann::json::parse(task_spec_to_json(fixture::tiny_spec()));
    j[key] = value;
    try {
      task_spec_from_json(j.dump());
      FAIL("accepted bad " << key);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(key) != std::string::npos);
    }
  };
  bad("contrast", -1.0);
  bad("dataset_size", 1);
  bad("expert_threshold", 1.5);
  bad("geometry", "torus");
  bad("extents", std::vector<int>{4, 32, 32});
  bad("colour", "blue");

  TaskSpec low = spec_for(Geometry::LowContrastBlob);
  low.contrast = 2.0;
  CHECK_THROWS_AS(low.validate(), ConfigError);
  CHECK_THROWS_AS(task_spec_from_json("{not json"), ConfigError);
}

TEST_CASE("loading a missing dataset is a missing artifact") {
  const auto dir = fixture::scratch_dir("synth_missing");
  CHECK_THROWS_AS(load_dataset(dir / "absent"), MissingArtifact);
}

}  // TEST_SUITE
