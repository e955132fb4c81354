#include "clopa/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <random>

#include "clopa/losses.hpp"
#include "clopa/model.hpp"
#include "clopa/ops.hpp"
#include "clopa/rng.hpp"
#include "clopa/trainer.hpp"

namespace clopa {
namespace {

using T = ad::BasicTensor<double>;
using Tape = ad::BasicTape<double>;
using Objective = std::function<T(Tape&, const std::vector<T>&)>;

constexpr double kDenomFloor = 1e-8;

std::uint64_t name_tag(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

T random_tensor(Rng& rng, ad::Shape shape, double lo, double hi, double min_abs = 0.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(ad::shape_numel(shape)));
  for (auto& x : v) {
    do x = u(rng);
    while (std::abs(x) < min_abs);
  }
  return T(std::move(shape), std::move(v), true);
}

// A scalar read-out with fixed random weights, so every output element
// contributes to the checked gradient.
T readout(Tape& tape, const T& y, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(static_cast<std::size_t>(y.numel()));
  for (auto& x : w) x = u(rng);
  return ad::weighted_sum(tape, y, std::span<const double>(w));
}

double elementwise_case(std::vector<T> inputs, const Objective& f, double h) {
  Tape tape;
  const T loss = f(tape, inputs);
  tape.backward(loss);
  double diff2 = 0.0, fd2 = 0.0;
  for (auto& in : inputs) {
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    auto data = in.mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double v = data[j];
      Tape off(false);
      data[j] = v + h;
      const double lp = f(off, inputs).item();
      data[j] = v - h;
      const double lm = f(off, inputs).item();
      data[j] = v;
      const double fd = (lp - lm) / (2.0 * h);
      diff2 += (analytic[j] - fd) * (analytic[j] - fd);
      fd2 += fd * fd;
    }
  }
  return std::sqrt(diff2) / (std::sqrt(fd2) + kDenomFloor);
}

GradcheckResult run_op(const std::string& name, const GradcheckOptions& opt,
                       const std::function<double(Rng&, std::uint64_t)>& one_case) {
  GradcheckResult r;
  r.op = name;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_rng({opt.seed, name_tag(name)});
  for (int c = 0; c < opt.cases; ++c) {
    const double err = one_case(rng, static_cast<std::uint64_t>(c));
    r.worst = std::max(r.worst, err);
    if (!(err < opt.tolerance)) ++r.failures;
    ++r.cases;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Mask random_blob_mask(Rng& rng, int n) {
  Mask m(Extents{n, n, n});
  std::uniform_real_distribution<double> u(0.3 * n, 0.7 * n);
  const double cz = u(rng), cy = u(rng), cx = u(rng);
  const double r = std::uniform_real_distribution<double>(1.5, 0.35 * n)(rng);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) m.at(z, y, x) = std::hypot(z - cz, y - cy, x - cx) <= r;
  if (count_foreground(m) == 0) m.at(n / 2, n / 2, n / 2) = 1;
  return m;
}

struct DirectionalError {
  double at_step = 0.0;
  double at_fine_step = 0.0;
};

// Leaky-ReLU kinks make the composed loss only piecewise smooth, so the
// error is also measured at a step small enough to stay off the kinks.
DirectionalError interaction_case(Rng& rng, std::uint64_t c, double h, double fine_h) {
  constexpr int n = 8;
  ModelConfig cfg;
  cfg.num_stages = 2;
  auto store = convert_store<double>(build_model(cfg, derive_seed({c, 0x6763})));
  set_trainable(store, ParamGroupMode::All);

  std::vector<TrainingItem> batch;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int b = 0; b < 2; ++b) {
    TrainingItem item;
    item.gt = random_blob_mask(rng, n);
    item.image = Image(item.gt.extents);
    for (std::size_t i = 0; i < item.image.data.size(); ++i)
      item.image.data[i] = static_cast<float>(2.0 * item.gt.data[i] + noise(rng));
    item.click_seed = rng();
    batch.push_back(std::move(item));
  }
  constexpr int steps = 5;

  Tape probe(false);
  const auto schedule = interaction_loss(store, probe, batch, steps).schedule;

  Tape tape;
  const auto res = interaction_loss(store, tape, batch, steps, &schedule);
  tape.backward(res.loss);

  // direction: normalised analytic gradient plus a normalised random vector
  std::vector<std::vector<double>> g, dir;
  double gnorm = 0.0, rnorm = 0.0;
  for (const auto& p : store.params()) {
    g.emplace_back(p.value.grad().begin(), p.value.grad().end());
    std::vector<double> r(g.back().size());
    for (auto& x : r) {
      x = noise(rng);
      rnorm += x * x;
    }
    for (double x : g.back()) gnorm += x * x;
    dir.push_back(std::move(r));
  }
  gnorm = std::sqrt(gnorm);
  rnorm = std::sqrt(rnorm);
  double analytic = 0.0;
  for (std::size_t i = 0; i < dir.size(); ++i)
    for (std::size_t j = 0; j < dir[i].size(); ++j) {
      dir[i][j] = dir[i][j] / rnorm + (gnorm > 0 ? g[i][j] / gnorm : 0.0);
      analytic += g[i][j] * dir[i][j];
    }

  auto shifted_loss = [&](double offset) {
    auto moved = store.clone();
    auto& ps = moved.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto d = ps[i].value.mutable_data();
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += offset * dir[i][j];
    }
    Tape off(false);
    return interaction_loss(moved, off, batch, steps, &schedule).loss.item();
  };
  auto rel = [&](double step) {
    const double fd = (shifted_loss(step) - shifted_loss(-step)) / (2.0 * step);
    return std::abs(analytic - fd) / (std::abs(fd) + kDenomFloor);
  };
  return {rel(h), rel(fine_h)};
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt) {
  const double h = opt.step;
  std::vector<GradcheckResult> out;

  out.push_back(run_op("conv3d", opt, [h](Rng& rng, std::uint64_t c) {
    const int stride = 1 + static_cast<int>(c % 2);
    const int k = c % 3 == 2 ? 1 : 3;
    const int pad = (k - 1) / 2;
    const int cin = 1 + static_cast<int>(rng() % 3), cout = 1 + static_cast<int>(rng() % 3);
    const int n = 4 + static_cast<int>(rng() % 3);
    std::vector<T> in{random_tensor(rng, {cin, n, n, n}, -1, 1), random_tensor(rng, {cout, cin, k, k, k}, -1, 1),
                      random_tensor(rng, {cout}, -1, 1)};
    return elementwise_case(in, [=](Tape& t, const std::vector<T>& v) {
      return readout(t, ad::conv3d(t, v[0], v[1], v[2], stride, pad), c);
    }, h);
  }));

  out.push_back(run_op("instance_norm", opt, [h](Rng& rng, std::uint64_t c) {
    const int ch = 1 + static_cast<int>(rng() % 3);
    std::vector<T> in{random_tensor(rng, {ch, 4, 4, 4}, -2, 2), random_tensor(rng, {ch}, 0.5, 1.5),
                      random_tensor(rng, {ch}, -1, 1)};
    return elementwise_case(in, [=](Tape& t, const std::vector<T>& v) {
      return readout(t, ad::instance_norm(t, v[0], v[1], v[2]), c);
    }, h);
  }));

  out.push_back(run_op("leaky_relu", opt, [h](Rng& rng, std::uint64_t c) {
    // keep every input clear of the kink by more than the FD step
    std::vector<T> in{random_tensor(rng, {2, 4, 4, 4}, -2, 2, 10 * h)};
    return elementwise_case(in, [=](Tape& t, const std::vector<T>& v) { return readout(t, ad::leaky_relu(t, v[0]), c); },
                            h);
  }));

  out.push_back(run_op("softmax_channel", opt, [h](Rng& rng, std::uint64_t c) {
    const int ch = 2 + static_cast<int>(rng() % 2);
    std::vector<T> in{random_tensor(rng, {ch, 4, 4, 4}, -3, 3)};
    return elementwise_case(in, [=](Tape& t, const std::vector<T>& v) { return readout(t, ad::softmax_channel(t, v[0]), c); },
                            h);
  }));

  out.push_back(run_op("upsample_nearest2", opt, [h](Rng& rng, std::uint64_t c) {
    std::vector<T> in{random_tensor(rng, {2, 2, 3, 4}, -1, 1)};
    return elementwise_case(in, [=](Tape& t, const std::vector<T>& v) { return readout(t, ad::upsample_nearest2(t, v[0]), c); },
                            h);
  }));

  out.push_back(run_op("concat_channels", opt, [h](Rng& rng, std::uint64_t c) {
    std::vector<T> in{random_tensor(rng, {1, 3, 3, 3}, -1, 1), random_tensor(rng, {2, 3, 3, 3}, -1, 1)};
    return elementwise_case(in, [=](Tape& t, const std::vector<T>& v) {
      return readout(t, ad::concat_channels(t, v[0], v[1]), c);
    }, h);
  }));

  auto loss_case = [h](bool dice_loss) {
    return [h, dice_loss](Rng& rng, std::uint64_t) {
      const Mask y = random_blob_mask(rng, 4);
      std::vector<T> in{random_tensor(rng, {2, 4, 4, 4}, 0.05, 0.95)};
      return elementwise_case(in, [&y, dice_loss](Tape& t, const std::vector<T>& v) {
        return dice_loss ? soft_dice_loss(t, v[0], y) : ce_loss(t, v[0], y);
      }, h);
    };
  };
  out.push_back(run_op("soft_dice_loss", opt, loss_case(true)));
  out.push_back(run_op("ce_loss", opt, loss_case(false)));

  std::vector<DirectionalError> composed;
  out.push_back(run_op("interaction_loss", opt, [&](Rng& rng, std::uint64_t c) {
    composed.push_back(interaction_case(rng, c, h, opt.fine_step));
    return composed.back().at_step;
  }));
  GradcheckResult fine = out.back();
  fine.op = "interaction_loss@fine_step";
  fine.failures = 0;
  fine.worst = 0.0;
  fine.seconds = 0.0;
  for (const auto& e : composed) {
    fine.worst = std::max(fine.worst, e.at_fine_step);
    if (!(e.at_fine_step < opt.tolerance)) ++fine.failures;
  }
  out.push_back(fine);
  return out;
}

}  // namespace clopa
