#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clopa/interaction.hpp"
#include "clopa/model.hpp"
#include "clopa/sample.hpp"

namespace clopa {

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 10;
  int updates_per_epoch = 50;
  int batch_size = 2;
  int interaction_steps = 5;
  int patch_extent = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool flip_augmentation = false;

  void validate(const ModelConfig& model) const;
};

/// A training patch with the seed of its click stream.
struct TrainingItem {
  Image image;
  Mask gt;
  std::uint64_t click_seed = 0;
};

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> dice;  // per step, mean over active samples
  std::vector<double> ce;    // per step, mean over active samples
  std::vector<int> active;   // per step
};

/// Clicks added and activity for every (sample, step), so a loss can be
/// re-evaluated with the interaction held fixed.
struct ClickSchedule {
  std::vector<std::vector<std::vector<Click>>> clicks;  // [sample][step]
  std::vector<std::vector<bool>> active;                // [sample][step]
};

template <class Real>
struct InteractionLoss {
  ad::BasicTensor<Real> loss;
  LossBreakdown breakdown;
  ClickSchedule schedule;
};

template <class Real>
using Predictor = std::function<ad::BasicTensor<Real>(ad::BasicTape<Real>&, const ad::BasicTensor<Real>&)>;

/// Interaction-averaged Dice + cross-entropy:
///   L = (1/N) sum_i [ mean_active Dice_i + mean_active CE_i ]
/// A sample whose argmax prediction matches its target exactly is dropped
/// from every later step; a step with no active sample contributes zero.
/// When replay is given its clicks and activity are used verbatim.
template <class Real>
InteractionLoss<Real> interaction_loss(const Predictor<Real>& predict, ad::BasicTape<Real>& tape,
                                       std::span<const TrainingItem> batch, int steps,
                                       const ClickSchedule* replay = nullptr);

template <class Real>
InteractionLoss<Real> interaction_loss(const BasicParamStore<Real>& store, ad::BasicTape<Real>& tape,
                                       std::span<const TrainingItem> batch, int steps,
                                       const ClickSchedule* replay = nullptr);

/// Adam with bias correction over the parameters that require grad.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  /// Applies one update and zeroes the gradients.
  void step(ParamStore& store);
  int steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  TrainConfig cfg_;
  int t_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Patch of extent^3 centred on a random foreground voxel with probability
/// 1/2 and on a random background voxel otherwise, shifted to fit. Volumes
/// smaller than the patch are zero-padded. Returns whether the centre was
/// drawn from the foreground.
struct Patch {
  Image image;
  Mask gt;
  bool foreground_centred = false;
};
Patch sample_patch(const Image& image, const Mask& gt, int extent, Rng& rng);

struct UpdateLog {
  int update = 0;
  double total = 0.0;
  double dice = 0.0;
  double ce = 0.0;
};

struct EpisodeResult {
  ParamStore checkpoint;
  std::vector<UpdateLog> losses;
  std::vector<double> validation_dice;  // per epoch
  int best_epoch = -1;
  int updates = 0;
  bool no_validation = false;
};

/// epochs x updates_per_epoch Adam updates from start, selecting the epoch
/// checkpoint with the best validation Dice (latest on ties). With an
/// empty validation set the final epoch is kept and no_validation is set.
EpisodeResult run_episode(const ParamStore& start, const SampleRefs& train, const SampleRefs& val,
                          const TrainConfig& cfg, ParamGroupMode mode, std::uint64_t seed);

/// Mean final Dice of a rollout with interaction_steps - 1 editing steps.
double validation_dice(const ParamStore& store, const SampleRefs& val, int interaction_steps, std::uint64_t seed);

}  // namespace clopa
