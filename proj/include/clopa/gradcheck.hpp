#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Finite-difference verification of the analytic gradients, in double
// precision with central differences.

namespace clopa {

struct GradcheckOptions {
  int cases = 100;
  double step = 1e-3;
  double tolerance = 1e-3;
  /// Second step for the interaction loss, reported separately.
  double fine_step = 1e-6;
  std::uint64_t seed = 0;
};

/// Per operation: the worst case-wise relative error
/// ||analytic - fd|| / (||fd|| + 1e-8) over `cases` random inputs.
struct GradcheckResult {
  std::string op;
  int cases = 0;
  int failures = 0;
  double worst = 0.0;
  double seconds = 0.0;

  bool passed() const { return failures == 0; }
};

/// conv3d, instance_norm, leaky_relu, softmax_channel, upsample, concat,
/// soft_dice_loss, ce_loss and the interaction loss of a two-stage model on
/// 8^3 patches with its clicks held fixed. Single ops are checked on every
/// input element; the interaction loss along a random direction blended
/// with the analytic gradient, at `step` and again at `fine_step`
/// (reported as "interaction_loss@fine_step").
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options);

}  // namespace clopa
