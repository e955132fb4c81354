#include "clopa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clopa {
namespace {

template <class Real>
std::int64_t check_probs(const ad::BasicTensor<Real>& probs, const Mask& target, const char* op) {
  const auto n = target.extents.numel();
  if (probs.shape().size() != 4 || probs.dim(0) != 2 || probs.numel() != 2 * n) {
    throw std::invalid_argument(std::string(op) + ": expected probabilities [2," + target.extents.str() + "], got " +
                                ad::shape_to_string(probs.shape()));
  }
  return n;
}

}  // namespace

template <class Real>
ad::BasicTensor<Real> soft_dice_loss(ad::BasicTape<Real>& tape, const ad::BasicTensor<Real>& probs,
                                     const Mask& target) {
  const auto n = check_probs(probs, target, "soft_dice_loss");
  const Real* fg = probs.data().data() + n;
  const auto* y = target.data.data();
  double inter = 0.0, psum = 0.0, ysum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double yi = y[i] != 0;
    inter += fg[i] * yi;
    psum += fg[i];
    ysum += yi;
  }
  const double s = kDiceSmoothing;
  const double num = 2.0 * inter + s;
  const double den = psum + ysum + s;
  auto loss = ad::BasicTensor<Real>::scalar(static_cast<Real>(1.0 - num / den));
  if (!tape.wants({&probs})) return loss;

  loss.set_requires_grad(true);
  tape.record("soft_dice_loss", loss, [=, probs = probs, target = target]() mutable {
    const double g = loss.grad()[0];
    Real* gp = probs.grad_buffer().data() + n;
    const auto* yy = target.data.data();
    const double inv = 1.0 / (den * den);
    for (std::int64_t i = 0; i < n; ++i) {
      const double yi = yy[i] != 0;
      gp[i] += static_cast<Real>(-g * (2.0 * yi * den - num) * inv);
    }
  });
  return loss;
}

template <class Real>
ad::BasicTensor<Real> ce_loss(ad::BasicTape<Real>& tape, const ad::BasicTensor<Real>& probs, const Mask& target) {
  const auto n = check_probs(probs, target, "ce_loss");
  const Real* p = probs.data().data();
  const auto* y = target.data.data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double pt = p[(y[i] != 0 ? n : 0) + i];
    acc -= std::log(std::max(pt, kProbabilityFloor));
  }
  auto loss = ad::BasicTensor<Real>::scalar(static_cast<Real>(acc / static_cast<double>(n)));
  if (!tape.wants({&probs})) return loss;

  loss.set_requires_grad(true);
  tape.record("ce_loss", loss, [=, probs = probs, target = target]() mutable {
    const double g = loss.grad()[0] / static_cast<double>(n);
    Real* gp = probs.grad_buffer().data();
    const Real* pp = probs.data().data();
    const auto* yy = target.data.data();
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t j = (yy[i] != 0 ? n : 0) + i;
      const double pt = pp[j];
      if (pt > kProbabilityFloor) gp[j] += static_cast<Real>(-g / pt);
    }
  });
  return loss;
}

template ad::BasicTensor<float> soft_dice_loss(ad::BasicTape<float>&, const ad::BasicTensor<float>&, const Mask&);
template ad::BasicTensor<double> soft_dice_loss(ad::BasicTape<double>&, const ad::BasicTensor<double>&, const Mask&);
template ad::BasicTensor<float> ce_loss(ad::BasicTape<float>&, const ad::BasicTensor<float>&, const Mask&);
template ad::BasicTensor<double> ce_loss(ad::BasicTape<double>&, const ad::BasicTensor<double>&, const Mask&);

}  // namespace clopa
