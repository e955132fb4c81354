#include <random>

#include "clopa/interaction.hpp"
#include "clopa/synthdata.hpp"
#include "doctest.h"
#include "support/fixtures.hpp"

using namespace clopa;

namespace {

Mask box(Extents e, Voxel lo, Voxel hi) {
  Mask m(e);
  for (int z = lo.z; z < hi.z; ++z)
    for (int y = lo.y; y < hi.y; ++y)
      for (int x = lo.x; x < hi.x; ++x) m.at(z, y, x) = 1;
  return m;
}

}  // namespace

TEST_SUITE("interaction") {

TEST_CASE("false-negative regions") {
  const Extents e{6, 6, 6};
  const Mask gt = box(e, {1, 1, 1}, {4, 4, 4});
  const Mask empty(e);
  CHECK(false_negative_region(empty, gt, ClickClass::Foreground) == gt);
  CHECK(count_foreground(false_negative_region(empty, gt, ClickClass::Background)) == 0);
  CHECK(count_foreground(false_negative_region(gt, gt, ClickClass::Foreground)) == 0);
  CHECK(count_foreground(false_negative_region(gt, gt, ClickClass::Background)) == 0);

  const Mask pred = box(e, {0, 0, 0}, {5, 5, 5});
  const Mask bg = false_negative_region(pred, gt, ClickClass::Background);
  for (std::size_t i = 0; i < bg.data.size(); ++i) CHECK(bg.data[i] == (pred.data[i] && !gt.data[i]));
}

TEST_CASE("click sampling: single voxel, empty region, uniformity") {
  Mask one(Extents{4, 4, 4});
  one.at(2, 1, 3) = 1;
  Rng rng(1);
  const auto c = sample_click(one, ClickClass::Background, 3, rng);
  REQUIRE(c.has_value());
  CHECK(c->position == Voxel{2, 1, 3});
  CHECK(c->cls == ClickClass::Background);
  CHECK(c->step == 3);
  CHECK_FALSE(sample_click(Mask(Extents{4, 4, 4}), ClickClass::Foreground, 0, rng).has_value());

  Mask two(Extents{4, 4, 4});
  two.at(0, 0, 0) = two.at(3, 3, 3) = 1;
  int first = 0;
  for (int i = 0; i < 1000; ++i) first += sample_click(two, ClickClass::Foreground, 0, rng)->position == Voxel{0, 0, 0};
  CHECK(first / 1000.0 == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("prompt encoding: empty, a radius-1 cross, idempotence, clipping") {
  const Extents e{5, 5, 5};
  const auto none = encode_prompts({}, e);
  CHECK(none == std::vector<float>(2 * 125, 0.0f));

  const std::vector<Click> centre{{{2, 2, 2}, ClickClass::Foreground, 0}};
  const auto enc = encode_prompts(centre, e);
  int set = 0;
  for (int z = 0; z < 5; ++z)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) {
        const int d2 = (z - 2) * (z - 2) + (y - 2) * (y - 2) + (x - 2) * (x - 2);
        CHECK(enc[e.index(z, y, x)] == (d2 <= 1 ? 1.0f : 0.0f));
        set += enc[e.index(z, y, x)] != 0;
      }
  CHECK(set == 7);
  for (int i = 125; i < 250; ++i) CHECK(enc[i] == 0.0f);

  const std::vector<Click> twice{centre[0], centre[0]};
  CHECK(encode_prompts(twice, e) == enc);

  const std::vector<Click> corner{{{0, 0, 0}, ClickClass::Background, 0}};
  const auto c = encode_prompts(corner, e);
  int in_bg = 0;
  for (int i = 125; i < 250; ++i) in_bg += c[i] != 0;
  CHECK(in_bg == 4);

  const std::vector<Click> outside{{{5, 0, 0}, ClickClass::Foreground, 0}};
  CHECK_THROWS_AS(encode_prompts(outside, e), std::invalid_argument);
}

TEST_CASE("binarize: ties go to background") {
  const ad::Tensor p({2, 1, 1, 3}, {0.5f, 0.4f, 0.7f, 0.5f, 0.6f, 0.3f});
  const Mask m = binarize(p, Extents{1, 1, 3}, {1, 1, 1});
  CHECK(m.data == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("step clicks: initialisation draws one of each, later steps follow the errors") {
  const Extents e{6, 6, 6};
  const Mask gt = box(e, {1, 1, 1}, {3, 3, 3});
  InteractionState s;
  s.prediction = Mask(e);
  Rng rng(2);
  CHECK(add_step_clicks(s, gt, 0, rng) == 2);
  CHECK(gt.at(s.clicks[0].position) == 1);
  CHECK(gt.at(s.clicks[1].position) == 0);

  s.prediction = gt;  // perfect: both regions empty
  CHECK(add_step_clicks(s, gt, 1, rng) == 0);

  s.prediction = Mask(e);  // missing everything: only a foreground click
  CHECK(add_step_clicks(s, gt, 2, rng) == 1);
  CHECK(s.clicks.back().cls == ClickClass::Foreground);
  CHECK(s.clicks.back().step == 2);
}

TEST_CASE("rollout: lengths, determinism and click accounting") {
  const auto spec = fixture::tiny_spec(2);
  const Sample smp = generate_sample(spec, 0, 3);
  const auto store = build_model(fixture::tiny_model(), 1);

  const auto zero = rollout(store, smp.image, smp.gt, 5, 0, {0, RecordMode::Metrics, 1.0});
  CHECK(zero.steps.size() == 1);

  const RolloutOptions opt{4, RecordMode::Predictions, 1.0};
  const auto a = rollout(store, smp.image, smp.gt, 5, 0, opt);
  const auto b = rollout(store, smp.image, smp.gt, 5, 0, opt);
  CHECK(a.steps.size() == 5);
  CHECK(a.predictions.size() == 5);
  CHECK(a.clicks == b.clicks);
  CHECK(a.predictions == b.predictions);
  for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].dice == b.steps[i].dice);
  CHECK(a.steps[0].clicks_fg == 1);
  CHECK(a.steps[0].clicks_bg == 1);
  CHECK(a.steps.back().clicks_fg + a.steps.back().clicks_bg == static_cast<int>(a.clicks.size()));

  const auto other = rollout(store, smp.image, smp.gt, 6, 0, opt);
  CHECK(other.clicks != a.clicks);
}

TEST_CASE("rollout: reaching the target stops clicking and pads the trace") {
  // whole-volume target and a head biased to foreground: exact at initialisation
  const Extents e{8, 8, 8};
  const Mask gt(e, {1, 1, 1}, 1);
  Image img(e);
  auto store = build_model(fixture::tiny_model(), 2);
  for (auto& v : store.at("head.conv.weight").mutable_data()) v = 0.0f;
  store.at("head.conv.bias").mutable_data()[1] = 5.0f;
  const auto t = rollout(store, img, gt, 1, 0, {6, RecordMode::Metrics, 1.0});
  CHECK(t.terminated);
  CHECK(t.terminated_at == 0);
  CHECK(t.steps.size() == 7);
  CHECK(t.clicks.size() == 1);  // the initial background click has nowhere to go
  for (const auto& s : t.steps) {
    CHECK(s.dice == 1.0);
    CHECK(s.clicks_fg + s.clicks_bg == 1);
  }
}

TEST_CASE("rollout: an empty target is rejected") {
  const auto store = build_model(fixture::tiny_model(), 3);
  CHECK_THROWS_AS(rollout(store, Image(Extents{8, 8, 8}), Mask(Extents{8, 8, 8}), 0, 0, {}), std::invalid_argument);
}

}  // TEST_SUITE
