#pragma once

// Scripted predictors and closed-form loss terms for masking checks on 4^3 volumes.

#include <cmath>
#include <deque>
#include <random>
#include <stdexcept>

#include "clopa/losses.hpp"
#include "clopa/trainer.hpp"

namespace clopa::script {

using T = ad::BasicTensor<double>;
using Tape = ad::BasicTape<double>;

inline constexpr int kN = 4;
inline constexpr int kV = kN * kN * kN;

// Independent closed forms of the two per-step terms.
inline double dice_term(const std::vector<double>& fg, const Mask& y) {
  double inter = 0, ps = 0, ys = 0;
  for (int i = 0; i < kV; ++i) {
    inter += fg[i] * y.data[i];
    ps += fg[i];
    ys += y.data[i];
  }
  return 1 - (2 * inter + kDiceSmoothing) / (ps + ys + kDiceSmoothing);
}

inline double ce_term(const std::vector<double>& fg, const Mask& y) {
  double s = 0;
  for (int i = 0; i < kV; ++i) s -= std::log(y.data[i] ? fg[i] : 1 - fg[i]);
  return s / kV;
}

inline Mask blob_gt(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Mask m(Extents{kN, kN, kN});
  for (auto& v : m.data) v = rng() % 3 == 0;
  m.data[0] = 1;
  m.data[1] = 0;
  return m;
}

// Foreground maps that binarise to something other than y (voxel 0 is wrong).
inline std::vector<double> noisy_fg(std::mt19937_64& rng, const Mask& y) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<double> fg(kV);
  for (auto& v : fg) v = u(rng);
  fg[0] = y.data[0] ? 0.2 : 0.8;
  return fg;
}

inline std::vector<double> exact_fg(const Mask& y) {
  std::vector<double> fg(kV);
  for (int i = 0; i < kV; ++i) fg[i] = y.data[i] ? 0.9 : 0.1;
  return fg;
}

// Returns queued foreground maps in call order, ignoring its input.
struct Script {
  std::deque<std::vector<double>> queue;
  int calls = 0;

  Predictor<double> predictor() {
    return [this](Tape&, const T&) {
      if (queue.empty()) throw std::logic_error("script exhausted");
      const auto fg = queue.front();
      queue.pop_front();
      ++calls;
      std::vector<double> v(2 * kV);
      for (int i = 0; i < kV; ++i) {
        v[i] = 1 - fg[i];
        v[kV + i] = fg[i];
      }
      return T({2, kN, kN, kN}, v);
    };
  }
};

inline std::vector<TrainingItem> batch_of(const std::vector<Mask>& gts) {
  std::vector<TrainingItem> b;
  for (std::size_t i = 0; i < gts.size(); ++i) b.push_back({Image(gts[i].extents), gts[i], 100 + i});
  return b;
}


}  // namespace clopa::script
