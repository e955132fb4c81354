#include "clopa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "clopa/losses.hpp"
#include "clopa/metrics.hpp"
#include "clopa/ops.hpp"

namespace clopa {

void TrainConfig::validate(const ModelConfig& model) const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid trainer config: " + m); };
  if (!(lr > 0.0)) fail("lr must be positive");
  if (epochs < 1) fail("epochs must be >= 1");
  if (updates_per_epoch < 1) fail("updates_per_epoch must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (interaction_steps < 1) fail("interaction_steps must be >= 1");
  if (patch_extent < 1 || patch_extent % model.stride_multiple() != 0) {
    fail("patch_extent must be a positive multiple of " + std::to_string(model.stride_multiple()));
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) fail("adam eps must be positive");
}

template <class Real>
InteractionLoss<Real> interaction_loss(const Predictor<Real>& predict, ad::BasicTape<Real>& tape,
                                       std::span<const TrainingItem> batch, int steps, const ClickSchedule* replay) {
  if (batch.empty()) throw std::invalid_argument("interaction_loss: empty batch");
  if (steps < 1) throw std::invalid_argument("interaction_loss: steps must be >= 1");
  const std::size_t B = batch.size();
  if (replay && (replay->clicks.size() != B || replay->active.size() != B)) {
    throw std::invalid_argument("interaction_loss: replay schedule does not match batch");
  }

  InteractionLoss<Real> out;
  out.schedule.clicks.assign(B, {});
  out.schedule.active.assign(B, {});
  std::vector<InteractionState> states(B);
  for (std::size_t b = 0; b < B; ++b) states[b].prediction = Mask(batch[b].gt.extents, batch[b].gt.spacing);

  ad::BasicTensor<Real> total;
  for (int i = 0; i < steps; ++i) {
    ad::BasicTensor<Real> step_sum;
    int active = 0;
    double dice_sum = 0.0, ce_sum = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto& item = batch[b];
      auto& st = states[b];
      const bool is_active = replay ? static_cast<bool>(replay->active[b].at(i)) : !st.terminated;
      out.schedule.active[b].push_back(is_active);
      if (!is_active) {
        out.schedule.clicks[b].emplace_back();
        continue;
      }
      const auto before = st.clicks.size();
      if (replay) {
        const auto& fixed = replay->clicks[b].at(i);
        st.clicks.insert(st.clicks.end(), fixed.begin(), fixed.end());
      } else {
        auto rng = click_rng(item.click_seed, 0, i);
        add_step_clicks(st, item.gt, i, rng);
      }
      out.schedule.clicks[b].emplace_back(st.clicks.begin() + static_cast<std::ptrdiff_t>(before), st.clicks.end());

      const auto probs = predict(tape, make_input<Real>(item.image, st.clicks));
      const auto d = soft_dice_loss(tape, probs, item.gt);
      const auto c = ce_loss(tape, probs, item.gt);
      const auto term = ad::add(tape, d, c);
      step_sum = step_sum.defined() ? ad::add(tape, step_sum, term) : term;
      dice_sum += d.item();
      ce_sum += c.item();
      ++active;

      st.prediction = binarize(probs, item.gt.extents, item.gt.spacing);
      if (!replay && dice(st.prediction, item.gt) == 1.0) st.terminated = true;
    }
    out.breakdown.active.push_back(active);
    if (active == 0) {
      out.breakdown.dice.push_back(0.0);
      out.breakdown.ce.push_back(0.0);
      continue;
    }
    out.breakdown.dice.push_back(dice_sum / active);
    out.breakdown.ce.push_back(ce_sum / active);
    const auto step_mean = ad::scale(tape, step_sum, 1.0 / active);
    total = total.defined() ? ad::add(tape, total, step_mean) : step_mean;
  }
  if (!total.defined()) total = ad::BasicTensor<Real>::scalar(Real(0));
  out.loss = ad::scale(tape, total, 1.0 / steps);
  out.breakdown.total = out.loss.item();
  return out;
}

template <class Real>
InteractionLoss<Real> interaction_loss(const BasicParamStore<Real>& store, ad::BasicTape<Real>& tape,
                                       std::span<const TrainingItem> batch, int steps, const ClickSchedule* replay) {
  Predictor<Real> predict = [&store](ad::BasicTape<Real>& t, const ad::BasicTensor<Real>& x) {
    return forward(store, t, x);
  };
  return interaction_loss(predict, tape, batch, steps, replay);
}

template InteractionLoss<float> interaction_loss(const Predictor<float>&, ad::BasicTape<float>&,
                                                 std::span<const TrainingItem>, int, const ClickSchedule*);
template InteractionLoss<double> interaction_loss(const Predictor<double>&, ad::BasicTape<double>&,
                                                  std::span<const TrainingItem>, int, const ClickSchedule*);
template InteractionLoss<float> interaction_loss(const BasicParamStore<float>&, ad::BasicTape<float>&,
                                                 std::span<const TrainingItem>, int, const ClickSchedule*);
template InteractionLoss<double> interaction_loss(const BasicParamStore<double>&, ad::BasicTape<double>&,
                                                  std::span<const TrainingItem>, int, const ClickSchedule*);

void AdamOptimizer::step(ParamStore& store) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (auto& p : store.params()) {
    if (!p.value.requires_grad()) continue;
    if (!p.value.has_grad()) continue;
    auto& mo = moments_[p.name];
    const auto n = static_cast<std::size_t>(p.value.numel());
    if (mo.m.empty()) {
      mo.m.assign(n, 0.0);
      mo.v.assign(n, 0.0);
    }
    const auto g = p.value.grad();
    auto w = p.value.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * gi;
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = mo.m[i] / c1;
      const double vhat = mo.v[i] / c2;
      w[i] = static_cast<float>(w[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
    }
    p.value.zero_grad();
  }
}

namespace {

template <class T>
Volume<T> pad_to(const Volume<T>& v, const Extents& e) {
  if (v.extents == e) return v;
  Volume<T> out(e, v.spacing);
  for (int z = 0; z < v.extents.d; ++z)
    for (int y = 0; y < v.extents.h; ++y)
      for (int x = 0; x < v.extents.w; ++x) out.at(z, y, x) = v.at(z, y, x);
  return out;
}

template <class T>
Volume<T> crop(const Volume<T>& v, const Voxel& start, int extent) {
  Volume<T> out(Extents{extent, extent, extent}, v.spacing);
  for (int z = 0; z < extent; ++z)
    for (int y = 0; y < extent; ++y) {
      const T* src = &v.at(start.z + z, start.y + y, start.x);
      std::copy(src, src + extent, &out.at(z, y, 0));
    }
  return out;
}

template <class T>
void flip_axis(Volume<T>& v, int axis) {
  const auto e = v.extents;
  Volume<T> out = v;
  for (int z = 0; z < e.d; ++z)
    for (int y = 0; y < e.h; ++y)
      for (int x = 0; x < e.w; ++x) {
        const int sz = axis == 0 ? e.d - 1 - z : z;
        const int sy = axis == 1 ? e.h - 1 - y : y;
        const int sx = axis == 2 ? e.w - 1 - x : x;
        out.at(z, y, x) = v.at(sz, sy, sx);
      }
  v = std::move(out);
}

Voxel nth_voxel(const Mask& m, bool foreground, std::int64_t n) {
  const auto& e = m.extents;
  for (int z = 0; z < e.d; ++z)
    for (int y = 0; y < e.h; ++y)
      for (int x = 0; x < e.w; ++x) {
        if ((m.at(z, y, x) != 0) != foreground) continue;
        if (n-- == 0) return {z, y, x};
      }
  throw std::logic_error("nth_voxel: index out of range");
}

}  // namespace

Patch sample_patch(const Image& image, const Mask& gt, int extent, Rng& rng) {
  require_same_extents(image.extents, gt.extents, "sample_patch");
  if (extent < 1) throw std::invalid_argument("sample_patch: extent must be positive");
  const Extents padded{std::max(extent, image.extents.d), std::max(extent, image.extents.h),
                       std::max(extent, image.extents.w)};
  const Image img = pad_to(image, padded);
  const Mask seg = pad_to(gt, padded);

  const auto fg = count_foreground(seg);
  const auto bg = padded.numel() - fg;
  bool use_fg = uniform01(rng) < 0.5;
  if (fg == 0) use_fg = false;
  if (bg == 0) use_fg = true;
  const auto pool = use_fg ? fg : bg;
  const Voxel centre = nth_voxel(seg, use_fg, static_cast<std::int64_t>(uniform_index(rng, pool)));

  auto start_for = [&](int c, int n) { return std::clamp(c - extent / 2, 0, n - extent); };
  const Voxel start{start_for(centre.z, padded.d), start_for(centre.y, padded.h), start_for(centre.x, padded.w)};
  return Patch{crop(img, start, extent), crop(seg, start, extent), use_fg};
}

double validation_dice(const ParamStore& store, const SampleRefs& val, int interaction_steps, std::uint64_t seed) {
  if (val.empty()) return 0.0;
  RolloutOptions opts;
  opts.steps = std::max(0, interaction_steps - 1);
  opts.mode = RecordMode::DiceOnly;
  double acc = 0.0;
  for (const auto* s : val) acc += rollout(store, s->image, s->gt, seed, s->id, opts).steps.back().dice;
  return acc / static_cast<double>(val.size());
}

EpisodeResult run_episode(const ParamStore& start, const SampleRefs& train, const SampleRefs& val,
                          const TrainConfig& cfg, ParamGroupMode mode, std::uint64_t seed) {
  cfg.validate(start.config());
  if (train.empty()) throw std::invalid_argument("run_episode: empty training set");

  EpisodeResult result;
  ParamStore store = start.clone();
  store.zero_grad();
  set_trainable(store, mode);
  AdamOptimizer adam(cfg);

  double best = -std::numeric_limits<double>::infinity();
  const std::uint64_t val_seed = derive_seed({seed, 0x76616cULL});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int u = 0; u < cfg.updates_per_epoch; ++u) {
      const int update = epoch * cfg.updates_per_epoch + u;
      auto rng = make_rng({seed, 0x6261746368ULL, static_cast<std::uint64_t>(update)});
      std::vector<TrainingItem> batch;
      batch.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Sample& s = *train[uniform_index(rng, train.size())];
        auto patch = sample_patch(s.image, s.gt, cfg.patch_extent, rng);
        if (cfg.flip_augmentation) {
          for (int axis = 0; axis < 3; ++axis) {
            if (uniform01(rng) < 0.5) {
              flip_axis(patch.image, axis);
              flip_axis(patch.gt, axis);
            }
          }
        }
        batch.push_back({std::move(patch.image), std::move(patch.gt),
                         derive_seed({seed, static_cast<std::uint64_t>(update), static_cast<std::uint64_t>(b)})});
      }
      ad::Tape tape;
      const auto res = interaction_loss(store, tape, batch, cfg.interaction_steps);
      if (res.loss.requires_grad()) tape.backward(res.loss);
      adam.step(store);

      UpdateLog log{update, res.breakdown.total, 0.0, 0.0};
      for (std::size_t i = 0; i < res.breakdown.dice.size(); ++i) {
        log.dice += res.breakdown.dice[i] / cfg.interaction_steps;
        log.ce += res.breakdown.ce[i] / cfg.interaction_steps;
      }
      result.losses.push_back(log);
    }
    if (!val.empty()) {
      const double vd = validation_dice(store, val, cfg.interaction_steps, val_seed);
      result.validation_dice.push_back(vd);
      if (vd >= best) {
        best = vd;
        result.checkpoint = store.clone();
        result.best_epoch = epoch;
      }
    }
  }
  if (val.empty()) {
    result.checkpoint = store.clone();
    result.best_epoch = cfg.epochs - 1;
    result.no_validation = true;
  }
  result.updates = adam.steps_taken();
  set_trainable(result.checkpoint, ParamGroupMode::Frozen);
  return result;
}

}  // namespace clopa
