#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "clopa/model.hpp"
#include "clopa/ops.hpp"
#include "clopa/rng.hpp"
#include "doctest.h"

using namespace clopa;

namespace {

// Conv block (weight + bias) and instance norm (scale + bias) sizes.
std::int64_t conv(int cin, int cout, int k) { return static_cast<std::int64_t>(cout) * cin * k * k * k + cout; }
std::int64_t norm(int c) { return 2 * c; }

ad::Tensor random_input(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(3 * n * n * n);
  for (auto& x : v) x = g(rng);
  return ad::Tensor({3, n, n, n}, std::move(v));
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter count of the 3-stage, 8-channel network, counted by hand") {
  ModelConfig cfg;
  const auto store = build_model(cfg, 1);
  // encoder: two 3^3 conv+norm blocks per stage; widths 8, 16, 32
  const std::int64_t enc = conv(3, 8, 3) + norm(8) + conv(8, 8, 3) + norm(8) +      //
                           conv(8, 16, 3) + norm(16) + conv(16, 16, 3) + norm(16) +  //
                           conv(16, 32, 3) + norm(32) + conv(32, 32, 3) + norm(32);
  // decoder: 1^3 up-projection, then two conv+norm blocks on the concatenation
  const std::int64_t dec = conv(32, 16, 1) + conv(32, 16, 3) + norm(16) + conv(16, 16, 3) + norm(16) +  //
                           conv(16, 8, 1) + conv(16, 8, 3) + norm(8) + conv(8, 8, 3) + norm(8);
  const std::int64_t head = conv(8, 2, 1);
  CHECK(enc + dec + head == 81298);
  CHECK(store.total_count() == 81298);
}

TEST_CASE("initialisation: norms are identity, biases zero, same seed same bytes") {
  const auto a = build_model(ModelConfig{}, 7), b = build_model(ModelConfig{}, 7), c = build_model(ModelConfig{}, 8);
  CHECK(checkpoint_bytes(a) == checkpoint_bytes(b));
  CHECK(checkpoint_bytes(a) != checkpoint_bytes(c));
  for (const auto& p : a.params()) {
    const bool is_scale = p.name.ends_with(".norm.scale");
    if (is_scale || p.name.ends_with(".bias")) {
      for (float v : p.value.data()) CHECK(v == (is_scale ? 1.0f : 0.0f));
    }
  }
}

TEST_CASE("parameter groups select the documented trainable sets") {
  auto store = build_model(ModelConfig{}, 2);
  std::set<std::string> in, cn;
  for (const auto& p : store.params()) {
    if (p.name.find(".norm.") != std::string::npos) in.insert(p.name);
    if (p.name.find(".norm.") != std::string::npos || p.name.starts_with("enc.0.") ||
        (p.name.starts_with("dec.0.") && !p.name.starts_with("dec.0.up")) || p.name.starts_with("head."))
      cn.insert(p.name);
  }
  auto trainable = [&](ParamGroupMode mode) {
    set_trainable(store, mode);
    std::set<std::string> s;
    for (const auto& p : store.params())
      if (p.value.requires_grad()) s.insert(p.name);
    return s;
  };
  CHECK(trainable(ParamGroupMode::Frozen).empty());
  CHECK(trainable(ParamGroupMode::InstanceNormOnly) == in);
  CHECK(trainable(ParamGroupMode::InstanceNormPlusShallowConv) == cn);
  CHECK(trainable(ParamGroupMode::All).size() == store.params().size());
  CHECK(in.size() < cn.size());
  CHECK(std::includes(cn.begin(), cn.end(), in.begin(), in.end()));
}

TEST_CASE("trainable fraction per mode") {
  auto store = build_model(ModelConfig{}, 3);
  set_trainable(store, ParamGroupMode::Frozen);
  CHECK(trainable_fraction(store) == 0.0);
  set_trainable(store, ParamGroupMode::All);
  CHECK(trainable_fraction(store) == 1.0);
  set_trainable(store, ParamGroupMode::InstanceNormOnly);
  // 2 * (8+8 + 16+16 + 32+32 + 16+16 + 8+8)
  CHECK(store.trainable_count() == 320);
  CHECK(trainable_fraction(store) == doctest::Approx(320.0 / 81298.0).epsilon(1e-15));
}

TEST_CASE("mode names round-trip") {
  for (auto m : {ParamGroupMode::Frozen, ParamGroupMode::InstanceNormOnly, ParamGroupMode::InstanceNormPlusShallowConv,
                 ParamGroupMode::All})
    CHECK(parse_param_group_mode(to_string(m)) == m);
  CHECK_THROWS(parse_param_group_mode("everything"));
}

TEST_CASE("forward: shape contract and per-voxel probabilities") {
  ModelConfig cfg;
  cfg.base_channels = 4;
  const auto store = build_model(cfg, 4);
  ad::Tape tape(false);
  const auto p = forward(store, tape, random_input(8, 1));
  CHECK(p.shape() == ad::Shape{2, 8, 8, 8});
  for (int v = 0; v < 512; ++v) CHECK(p.data()[v] + p.data()[512 + v] == doctest::Approx(1.0f).epsilon(1e-6));
  CHECK_THROWS_AS(forward(store, tape, random_input(6, 1)), std::invalid_argument);
  CHECK_THROWS_AS(forward(store, tape, ad::Tensor::zeros({2, 8, 8, 8})), std::invalid_argument);
}

TEST_CASE("forward: a zero head gives 0.5 everywhere") {
  auto store = build_model(ModelConfig{}, 5);
  for (auto& v : store.at("head.conv.weight").mutable_data()) v = 0.0f;
  ad::Tape tape(false);
  const auto p = forward(store, tape, random_input(8, 2));
  for (float v : p.data()) CHECK(v == 0.5f);
}

TEST_CASE("forward: float and double stores agree") {
  ModelConfig cfg;
  cfg.base_channels = 4;
  const auto f = build_model(cfg, 6);
  const auto d = convert_store<double>(f);
  const auto x = random_input(8, 3);
  ad::Tape tf(false);
  ad::BasicTape<double> td(false);
  const auto pf = forward(f, tf, x);
  const auto pd = forward(d, td, ad::BasicTensor<double>(x.shape(), {x.data().begin(), x.data().end()}));
  for (std::int64_t i = 0; i < pf.numel(); ++i) CHECK(pf.data()[i] == doctest::Approx(pd.data()[i]).epsilon(1e-4));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const auto store = build_model(ModelConfig{}, 9);
  std::stringstream ss;
  write_checkpoint(ss, store);
  const auto back = read_checkpoint(ss);
  CHECK(checkpoint_bytes(back) == checkpoint_bytes(store));
  CHECK(back.config() == store.config());
  REQUIRE(back.params().size() == store.params().size());
  for (std::size_t i = 0; i < back.params().size(); ++i) {
    CHECK(back.params()[i].name == store.params()[i].name);
    CHECK(back.params()[i].group == store.params()[i].group);
  }
}

TEST_CASE("checkpoints: truncated or foreign bytes are rejected") {
  const auto bytes = checkpoint_bytes(build_model(ModelConfig{}, 10));
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS(read_checkpoint(cut));
  std::stringstream junk("NOPE" + bytes.substr(4));
  CHECK_THROWS(read_checkpoint(junk));
}

TEST_CASE("clone is deep") {
  const auto a = build_model(ModelConfig{}, 11);
  auto b = a.clone();
  b.params()[0].value.mutable_data()[0] += 1.0f;
  CHECK(a.params()[0].value.data()[0] != b.params()[0].value.data()[0]);
  CHECK_FALSE(a.params()[0].value.same_storage(b.params()[0].value));
}

}  // TEST_SUITE
