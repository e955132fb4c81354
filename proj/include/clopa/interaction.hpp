#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "clopa/model.hpp"
#include "clopa/rng.hpp"
#include "clopa/tensor.hpp"
#include "clopa/volume.hpp"

// Simulated click-prompting user.

namespace clopa {

enum class ClickClass : std::uint8_t { Foreground = 0, Background = 1 };

struct Click {
  Voxel position;
  ClickClass cls = ClickClass::Foreground;
  int step = 0;
  friend bool operator==(const Click&, const Click&) = default;
};

inline constexpr int kPromptRadius = 1;

/// Foreground: gt & !pred. Background: pred & !gt.
Mask false_negative_region(const Mask& pred, const Mask& gt, ClickClass cls);

/// Uniformly random voxel of region, or nothing when region is empty.
std::optional<Click> sample_click(const Mask& region, ClickClass cls, int step, Rng& rng);

/// Two channels [fg, bg] of shape [2, D, H, W], each click rasterised as a
/// Euclidean ball of kPromptRadius voxels, clipped to the volume.
std::vector<float> encode_prompts(std::span<const Click> clicks, const Extents& extents);

/// Network input [3, D, H, W]: image followed by the two prompt channels.
template <class Real>
ad::BasicTensor<Real> make_input(const Image& image, std::span<const Click> clicks);

/// Argmax over [bg, fg] probabilities; exact ties go to background.
template <class Real>
Mask binarize(const ad::BasicTensor<Real>& probs, const Extents& extents, const Spacing& spacing);

struct InteractionState {
  std::vector<Click> clicks;
  Mask prediction;
  bool terminated = false;
};

/// Appends this step's clicks. Step 0 draws the foreground click from gt
/// and the background click from !gt; later steps draw each class from its
/// current false-negative region and skip a class whose region is empty.
/// Returns the number of clicks added.
int add_step_clicks(InteractionState& state, const Mask& gt, int step, Rng& rng);

/// Click stream for (seed, sample, step).
inline Rng click_rng(std::uint64_t seed, std::uint64_t sample_id, int step) {
  return make_rng({seed, sample_id, static_cast<std::uint64_t>(step)});
}

/// Predictions keeps every mask; Metrics keeps Dice and NSD; DiceOnly skips
/// the surface computation.
enum class RecordMode { Predictions, Metrics, DiceOnly };

struct StepRecord {
  double dice = 0.0;
  double nsd = 0.0;
  int clicks_fg = 0;
  int clicks_bg = 0;
};

struct RolloutTrace {
  std::vector<StepRecord> steps;  // initialisation plus one entry per editing step
  std::vector<Mask> predictions;  // filled in RecordMode::Predictions
  std::vector<Click> clicks;
  bool terminated = false;
  int terminated_at = -1;
};

struct RolloutOptions {
  int steps = 100;
  RecordMode mode = RecordMode::Metrics;
  double nsd_tolerance = 1.0;
};

/// Interactive initialisation followed by `steps` editing steps. Stops
/// adding clicks once the prediction matches gt exactly and pads the trace
/// with the terminal entry.
RolloutTrace rollout(const ParamStore& store, const Image& image, const Mask& gt, std::uint64_t seed,
                     std::uint64_t sample_id, const RolloutOptions& options);

}  // namespace clopa
