#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "clopa/losses.hpp"
#include "clopa/ops.hpp"
#include "doctest.h"

using namespace clopa;
using T = ad::BasicTensor<double>;
using Tape = ad::BasicTape<double>;

namespace {

// [bg, fg] probabilities from a foreground map.
T probs_from(const std::vector<double>& fg, int n) {
  std::vector<double> v(2 * fg.size());
  for (std::size_t i = 0; i < fg.size(); ++i) {
    v[i] = 1.0 - fg[i];
    v[fg.size() + i] = fg[i];
  }
  return T({2, n, n, n}, v, true);
}

Mask half_mask(int n) {
  Mask m(Extents{n, n, n});
  for (std::size_t i = 0; i < m.data.size(); i += 2) m.data[i] = 1;
  return m;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("soft dice: perfect, empty and uniform-half predictions") {
  const int n = 4;
  const Mask y = half_mask(n);
  Tape tape(false);
  std::vector<double> perfect(64);
  for (int i = 0; i < 64; ++i) perfect[i] = y.data[i];
  CHECK(soft_dice_loss(tape, probs_from(perfect, n), y).item() == doctest::Approx(0.0).scale(1).epsilon(1e-6));
  CHECK(soft_dice_loss(tape, probs_from(std::vector<double>(64, 0.0), n), y).item() ==
        doctest::Approx(1.0).epsilon(1e-6));
  // 1 - (2 * 0.25V) / (0.5V + 0.5V)
  CHECK(soft_dice_loss(tape, probs_from(std::vector<double>(64, 0.5), n), y).item() ==
        doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("cross-entropy: perfect and uniform predictions") {
  const int n = 4;
  const Mask y = half_mask(n);
  Tape tape(false);
  std::vector<double> perfect(64);
  for (int i = 0; i < 64; ++i) perfect[i] = y.data[i];
  CHECK(ce_loss(tape, probs_from(perfect, n), y).item() == doctest::Approx(0.0).scale(1).epsilon(1e-6));
  CHECK(ce_loss(tape, probs_from(std::vector<double>(64, 0.5), n), y).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // a confidently wrong voxel is charged at the probability floor, not infinity
  std::vector<double> wrong(64, 0.0);
  for (int i = 0; i < 64; ++i) wrong[i] = 1.0 - y.data[i];
  CHECK(ce_loss(tape, probs_from(wrong, n), y).item() == doctest::Approx(-std::log(kProbabilityFloor)).epsilon(1e-9));
}

TEST_CASE("cross-entropy and dice are invariant to a common voxel permutation") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  const int n = 4;
  std::vector<double> fg(64);
  for (auto& v : fg) v = u(rng);
  Mask y(Extents{n, n, n});
  for (auto& v : y.data) v = rng() % 2;
  std::vector<std::size_t> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> fg2(64);
  Mask y2(y.extents);
  for (std::size_t i = 0; i < 64; ++i) {
    fg2[i] = fg[perm[i]];
    y2.data[i] = y.data[perm[i]];
  }
  Tape tape(false);
  CHECK(ce_loss(tape, probs_from(fg, n), y).item() == doctest::Approx(ce_loss(tape, probs_from(fg2, n), y2).item()).epsilon(1e-12));
  CHECK(soft_dice_loss(tape, probs_from(fg, n), y).item() ==
        doctest::Approx(soft_dice_loss(tape, probs_from(fg2, n), y2).item()).epsilon(1e-12));
}

TEST_CASE("losses reject mismatched shapes") {
  Tape tape(false);
  const Mask y(Extents{4, 4, 4});
  CHECK_THROWS_AS(ce_loss(tape, T::zeros({2, 4, 4, 2}), y), std::invalid_argument);
  CHECK_THROWS_AS(soft_dice_loss(tape, T::zeros({3, 4, 4, 4}), y), std::invalid_argument);
}

TEST_CASE("loss gradients match central differences") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  const int n = 4;
  Mask y(Extents{n, n, n});
  for (auto& v : y.data) v = rng() % 3 == 0;
  std::vector<double> raw(128);
  for (auto& v : raw) v = u(rng);
  for (bool use_dice : {true, false}) {
    T p({2, n, n, n}, raw, true);
    Tape tape;
    tape.backward(use_dice ? soft_dice_loss(tape, p, y) : ce_loss(tape, p, y));
    const double h = 1e-6;
    auto d = p.mutable_data();
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double v = d[j];
      Tape off(false);
      d[j] = v + h;
      const double lp = (use_dice ? soft_dice_loss(off, p, y) : ce_loss(off, p, y)).item();
      d[j] = v - h;
      const double lm = (use_dice ? soft_dice_loss(off, p, y) : ce_loss(off, p, y)).item();
      d[j] = v;
      CHECK(p.grad()[j] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-5).scale(1e-3));
    }
  }
}

}  // TEST_SUITE
