#pragma once

#include <span>

#include "clopa/tensor.hpp"

// Differentiable array operations. Spatial tensors are laid out as
// [C, D, H, W] for a single sample; convolution weights as
// [C_out, C_in, k, k, k].

namespace clopa::ad {

inline constexpr double kInstanceNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.01;

/// Zero-padded cross-correlation. Output extent per axis is
/// floor((n + 2*pad - k) / stride) + 1.
template <class Real>
BasicTensor<Real> conv3d(BasicTape<Real>& tape, const BasicTensor<Real>& x, const BasicTensor<Real>& w,
                         const BasicTensor<Real>& b, int stride, int pad);

/// Per-channel standardisation over the spatial extent followed by the
/// affine map scale_c * xhat + bias_c.
template <class Real>
BasicTensor<Real> instance_norm(BasicTape<Real>& tape, const BasicTensor<Real>& x, const BasicTensor<Real>& scale,
                                const BasicTensor<Real>& bias, double eps = kInstanceNormEps);

template <class Real>
BasicTensor<Real> leaky_relu(BasicTape<Real>& tape, const BasicTensor<Real>& x, double slope = kLeakySlope);

/// Softmax across axis 0, independently for every voxel.
template <class Real>
BasicTensor<Real> softmax_channel(BasicTape<Real>& tape, const BasicTensor<Real>& x);

/// Nearest-neighbour 2x upsampling of the three spatial axes.
template <class Real>
BasicTensor<Real> upsample_nearest2(BasicTape<Real>& tape, const BasicTensor<Real>& x);

/// Stacks a and b along the channel axis; spatial extents must agree.
template <class Real>
BasicTensor<Real> concat_channels(BasicTape<Real>& tape, const BasicTensor<Real>& a, const BasicTensor<Real>& b);

template <class Real>
BasicTensor<Real> sum(BasicTape<Real>& tape, const BasicTensor<Real>& x);

/// Scalar sum_i weights[i] * x[i]; weights are constants.
template <class Real>
BasicTensor<Real> weighted_sum(BasicTape<Real>& tape, const BasicTensor<Real>& x, std::span<const Real> weights);

template <class Real>
BasicTensor<Real> add(BasicTape<Real>& tape, const BasicTensor<Real>& a, const BasicTensor<Real>& b);

template <class Real>
BasicTensor<Real> scale(BasicTape<Real>& tape, const BasicTensor<Real>& x, double factor);

}  // namespace clopa::ad
