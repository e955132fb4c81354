#pragma once

#include "clopa/tensor.hpp"
#include "clopa/volume.hpp"

namespace clopa {

inline constexpr double kDiceSmoothing = 1e-5;
inline constexpr double kProbabilityFloor = 1e-7;

/// 1 - (2 sum(p_fg y) + s) / (sum(p_fg) + sum(y) + s) on the foreground
/// channel of softmax output probs [2, D, H, W].
template <class Real>
ad::BasicTensor<Real> soft_dice_loss(ad::BasicTape<Real>& tape, const ad::BasicTensor<Real>& probs, const Mask& target);

/// Voxel-mean negative log-likelihood of the target class, with
/// probabilities floored at kProbabilityFloor.
template <class Real>
ad::BasicTensor<Real> ce_loss(ad::BasicTape<Real>& tape, const ad::BasicTensor<Real>& probs, const Mask& target);

}  // namespace clopa
