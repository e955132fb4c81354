#include <random>

#include "clopa/eval.hpp"
#include "clopa/metrics.hpp"
#include "doctest.h"
#include "support/hand_series.hpp"
#include "support/oracles.hpp"

using namespace clopa;

namespace {

Mask cube(int n, int lo, int hi, int shift_x = 0) {
  Mask m(Extents{n, n, n});
  for (int z = lo; z < hi; ++z)
    for (int y = lo; y < hi; ++y)
      for (int x = lo + shift_x; x < hi + shift_x; ++x) m.at(z, y, x) = 1;
  return m;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("dice: identical, disjoint and half-overlapping masks") {
  const Mask a = cube(8, 2, 5);
  CHECK(dice(a, a) == 1.0);
  CHECK(dice(cube(8, 0, 2), cube(8, 5, 7)) == 0.0);

  Mask p(Extents{1, 1, 4}), q(Extents{1, 1, 4});
  p.at(0, 0, 0) = p.at(0, 0, 1) = 1;
  q.at(0, 0, 1) = q.at(0, 0, 2) = 1;
  CHECK(dice(p, q) == 0.5);

  const Mask empty(Extents{4, 4, 4});
  CHECK(dice(empty, empty) == 1.0);
}

TEST_CASE("dice: equals the counting oracle on random masks") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 30; ++i) {
    const Mask a = oracle::random_mask(rng, 12), b = oracle::random_mask(rng, 12);
    CHECK(dice(a, b) == oracle::dice(a, b));
  }
}

TEST_CASE("nsd: identical masks score 1") {
  const Mask a = cube(10, 3, 7);
  CHECK(nsd(a, a, 0.0) == 1.0);
  CHECK(nsd(a, a, 1.0) == 1.0);
}

TEST_CASE("nsd: a one-voxel shift is fully within tolerance 1") {
  const Mask a = cube(10, 3, 7), b = cube(10, 3, 7, 1);
  CHECK(nsd(a, b, 1.0) == 1.0);
  CHECK(oracle::nsd(a, b, 1.0) == 1.0);
  CHECK(nsd(a, b, 0.5) < 1.0);
}

TEST_CASE("nsd: far-apart masks score 0") {
  CHECK(nsd(cube(16, 0, 3), cube(16, 12, 15), 1.0) == 0.0);
}

TEST_CASE("nsd: empty cases") {
  const Mask empty(Extents{6, 6, 6});
  CHECK(nsd(empty, empty, 1.0) == 1.0);
  CHECK(nsd(empty, cube(6, 1, 3), 1.0) == 0.0);
}

TEST_CASE("nsd: matches the all-pairs oracle, isotropic and anisotropic") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 12; ++i) {
    const Spacing sp = i % 2 ? Spacing{1.0, 1.0, 1.0} : Spacing{2.0, 0.7, 1.3};
    const Mask a = oracle::random_mask(rng, 10, sp), b = oracle::random_mask(rng, 10, sp);
    for (double tol : {0.0, 0.5, 1.0, 2.0}) {
      CAPTURE(i);
      CAPTURE(tol);
      CHECK(nsd(a, b, tol) == doctest::Approx(oracle::nsd(a, b, tol)).epsilon(1e-9));
    }
  }
}

TEST_CASE("nsd: symmetric in its arguments") {
  std::mt19937_64 rng(13);
  const Mask a = oracle::random_mask(rng, 10), b = oracle::random_mask(rng, 10);
  CHECK(nsd(a, b, 1.0) == nsd(b, a, 1.0));
}

TEST_CASE("nauc: constant, ramp and the three-point trapezoid") {
  const std::vector<double> flat(6, 0.8), ramp{0.0, 0.25, 0.5, 0.75, 1.0}, three{0.0, 1.0, 1.0};
  CHECK(nauc(flat) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(nauc(ramp) == 0.5);
  CHECK(nauc(three) == 0.75);
}

TEST_CASE("noi: first crossing, immediate success and failure") {
  const std::vector<double> s{0.5, 0.7, 0.9};
  CHECK(noi(s, 0.85).noi == 2);
  CHECK_FALSE(noi(s, 0.85).failed);
  CHECK(noi(s, 0.4).noi == 0);
  CHECK(normalised_noi(noi(s, 0.4), 2) == 0.0);
  const auto miss = noi(s, 0.95);
  CHECK(miss.failed);
  CHECK(miss.noi == 2);
  CHECK(normalised_noi(miss, 2) == 100.0);
}

TEST_CASE("hand-constructed series: nAUC, NoI and NoF") {
  std::vector<SampleScalars> scalars;
  std::uint64_t id = 0;
  for (const auto& h : oracle::hand_series()) {
    CAPTURE(id);
    CHECK(nauc(h.dice) == doctest::Approx(h.nauc).epsilon(1e-12));
    const auto r = noi(h.dice, h.threshold);
    CHECK(r.noi == h.noi);
    CHECK(r.failed == h.failed);
    CHECK(normalised_noi(r, static_cast<int>(h.dice.size()) - 1) ==
          doctest::Approx(100.0 * h.noi / (h.dice.size() - 1)).epsilon(1e-12));
    MetricSeries ms{id++, h.dice, h.dice};
    scalars.push_back(sample_scalars(ms, h.threshold));
  }
  CHECK(summarise(scalars).nof == oracle::kHandSeriesNof);
}

}  // TEST_SUITE
