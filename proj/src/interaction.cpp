#include "clopa/interaction.hpp"

#include <stdexcept>

#include "clopa/metrics.hpp"

namespace clopa {

Mask false_negative_region(const Mask& pred, const Mask& gt, ClickClass cls) {
  require_same_extents(pred.extents, gt.extents, "false_negative_region");
  Mask out(gt.extents, gt.spacing);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    out.data[i] = cls == ClickClass::Foreground ? (g && !p) : (p && !g);
  }
  return out;
}

std::optional<Click> sample_click(const Mask& region, ClickClass cls, int step, Rng& rng) {
  const auto count = count_foreground(region);
  if (count == 0) return std::nullopt;
  auto target = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::size_t>(count)));
  const auto& e = region.extents;
  for (int z = 0; z < e.d; ++z)
    for (int y = 0; y < e.h; ++y)
      for (int x = 0; x < e.w; ++x) {
        if (region.at(z, y, x) == 0) continue;
        if (target-- == 0) return Click{{z, y, x}, cls, step};
      }
  return std::nullopt;
}

std::vector<float> encode_prompts(std::span<const Click> clicks, const Extents& e) {
  std::vector<float> out(static_cast<std::size_t>(2 * e.numel()), 0.0f);
  constexpr int r = kPromptRadius;
  for (const auto& c : clicks) {
    if (!e.contains(c.position.z, c.position.y, c.position.x)) {
      throw std::invalid_argument("encode_prompts: click outside volume");
    }
    float* chan = out.data() + (c.cls == ClickClass::Foreground ? 0 : e.numel());
    for (int dz = -r; dz <= r; ++dz)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dz * dz + dy * dy + dx * dx > r * r) continue;
          const int z = c.position.z + dz, y = c.position.y + dy, x = c.position.x + dx;
          if (e.contains(z, y, x)) chan[e.index(z, y, x)] = 1.0f;
        }
  }
  return out;
}

template <class Real>
ad::BasicTensor<Real> make_input(const Image& image, std::span<const Click> clicks) {
  const auto& e = image.extents;
  const auto prompts = encode_prompts(clicks, e);
  std::vector<Real> data;
  data.reserve(static_cast<std::size_t>(3 * e.numel()));
  data.insert(data.end(), image.data.begin(), image.data.end());
  data.insert(data.end(), prompts.begin(), prompts.end());
  return ad::BasicTensor<Real>({3, e.d, e.h, e.w}, std::move(data));
}

template <class Real>
Mask binarize(const ad::BasicTensor<Real>& probs, const Extents& extents, const Spacing& spacing) {
  if (probs.shape().size() != 4 || probs.dim(0) != 2) throw std::invalid_argument("binarize: expected [2,D,H,W]");
  Mask out(extents, spacing);
  const auto n = extents.numel();
  if (probs.numel() != 2 * n) throw std::invalid_argument("binarize: extent mismatch");
  const auto p = probs.data();
  for (std::int64_t i = 0; i < n; ++i) out.data[i] = p[n + i] > p[i];
  return out;
}

template ad::BasicTensor<float> make_input(const Image&, std::span<const Click>);
template ad::BasicTensor<double> make_input(const Image&, std::span<const Click>);
template Mask binarize(const ad::BasicTensor<float>&, const Extents&, const Spacing&);
template Mask binarize(const ad::BasicTensor<double>&, const Extents&, const Spacing&);

int add_step_clicks(InteractionState& state, const Mask& gt, int step, Rng& rng) {
  int added = 0;
  auto push = [&](std::optional<Click> c) {
    if (c) {
      state.clicks.push_back(*c);
      ++added;
    }
  };
  if (step == 0) {
    Mask background(gt.extents, gt.spacing);
    for (std::size_t i = 0; i < gt.data.size(); ++i) background.data[i] = gt.data[i] == 0;
    push(sample_click(gt, ClickClass::Foreground, 0, rng));
    push(sample_click(background, ClickClass::Background, 0, rng));
  } else {
    push(sample_click(false_negative_region(state.prediction, gt, ClickClass::Foreground), ClickClass::Foreground,
                      step, rng));
    push(sample_click(false_negative_region(state.prediction, gt, ClickClass::Background), ClickClass::Background,
                      step, rng));
  }
  return added;
}

RolloutTrace rollout(const ParamStore& store, const Image& image, const Mask& gt, std::uint64_t seed,
                     std::uint64_t sample_id, const RolloutOptions& options) {
  require_same_extents(image.extents, gt.extents, "rollout");
  if (options.steps < 0) throw std::invalid_argument("rollout: steps must be >= 0");
  if (count_foreground(gt) == 0) throw std::invalid_argument("rollout: ground truth has no foreground");

  RolloutTrace trace;
  InteractionState state;
  state.prediction = Mask(gt.extents, gt.spacing);
  int fg = 0, bg = 0;

  auto record = [&]() {
    StepRecord r;
    r.dice = dice(state.prediction, gt);
    if (options.mode == RecordMode::Metrics) r.nsd = nsd(state.prediction, gt, options.nsd_tolerance);
    r.clicks_fg = fg;
    r.clicks_bg = bg;
    trace.steps.push_back(r);
    if (options.mode == RecordMode::Predictions) trace.predictions.push_back(state.prediction);
    if (r.dice == 1.0) {
      state.terminated = true;
      trace.terminated = true;
      trace.terminated_at = static_cast<int>(trace.steps.size()) - 1;
    }
  };

  for (int step = 0; step <= options.steps; ++step) {
    if (state.terminated) {
      trace.steps.push_back(trace.steps.back());
      if (options.mode == RecordMode::Predictions) trace.predictions.push_back(trace.predictions.back());
      continue;
    }
    auto rng = click_rng(seed, sample_id, step);
    const auto before = state.clicks.size();
    add_step_clicks(state, gt, step, rng);
    for (auto i = before; i < state.clicks.size(); ++i) {
      (state.clicks[i].cls == ClickClass::Foreground ? fg : bg)++;
    }
    ad::Tape tape(false);
    const auto probs = forward(store, tape, make_input<float>(image, state.clicks));
    state.prediction = binarize(probs, gt.extents, gt.spacing);
    record();
  }
  trace.clicks = std::move(state.clicks);
  return trace;
}

}  // namespace clopa
