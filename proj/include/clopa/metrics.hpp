#pragma once

#include <span>
#include <vector>

#include "clopa/volume.hpp"

// Per-sample segmentation metrics on binary masks.

namespace clopa {

/// 2|a & b| / (|a| + |b|); two empty masks score 1.
double dice(const Mask& a, const Mask& b);

/// A boundary face of a foreground voxel, stored in doubled (half-voxel)
/// grid coordinates: voxel centres sit at odd indices, faces at even ones
/// along their normal axis.
struct SurfaceFace {
  int z2 = 0;
  int y2 = 0;
  int x2 = 0;
};

/// Faces between foreground voxels and background (or the volume border).
std::vector<SurfaceFace> surface_faces(const Mask& m);

/// Normalised surface Dice: the fraction of both masks' boundary faces
/// lying within tolerance (physical units) of the other mask's boundary.
/// Two empty masks score 1, one empty mask scores 0.
double nsd(const Mask& a, const Mask& b, double tolerance);

/// Squared Euclidean distance (physical units) from every cell of the
/// doubled grid of extents e to the nearest face in faces. Cells beyond
/// reach hold +inf when faces is empty.
std::vector<double> squared_face_distance(const Extents& e, const Spacing& spacing,
                                          const std::vector<SurfaceFace>& faces);

/// Trapezoidal area under series over steps [0, S], divided by S.
double nauc(std::span<const double> series);

struct NoiResult {
  int noi = 0;
  bool failed = false;
};

/// First step whose Dice reaches threshold; S with failed=true otherwise.
NoiResult noi(std::span<const double> dice_series, double threshold);

/// 100 * noi / S.
double normalised_noi(const NoiResult& r, int max_steps);

}  // namespace clopa
