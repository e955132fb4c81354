#pragma once

// Slow reference implementations used as test oracles. None of them share
// code with the library; they are deliberately written the obvious way.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "clopa/volume.hpp"

namespace clopa::oracle {

/// Direct nested-loop convolution, zero padding, x [cin,D,H,W],
/// w [cout,cin,k,k,k]. Output extents follow floor((n + 2p - k) / s) + 1.
inline std::vector<double> conv3d(const std::vector<double>& x, int cin, int d, int h, int wd,
                                  const std::vector<double>& w, int cout, int k, const std::vector<double>& bias,
                                  int stride, int pad, int& od, int& oh, int& ow) {
  od = (d + 2 * pad - k) / stride + 1;
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(cout) * od * oh * ow, 0.0);
  for (int co = 0; co < cout; ++co)
    for (int z = 0; z < od; ++z)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = bias[co];
          for (int ci = 0; ci < cin; ++ci)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b)
                for (int c = 0; c < k; ++c) {
                  const int iz = z * stride - pad + a, iy = yy * stride - pad + b, ix = xx * stride - pad + c;
                  if (iz < 0 || iz >= d || iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                  acc += x[((static_cast<std::size_t>(ci) * d + iz) * h + iy) * wd + ix] *
                         w[(((static_cast<std::size_t>(co) * cin + ci) * k + a) * k + b) * k + c];
                }
          y[((static_cast<std::size_t>(co) * od + z) * oh + yy) * ow + xx] = acc;
        }
  return y;
}

/// Dice by counting voxels in three separate passes.
inline double dice(const Mask& a, const Mask& b) {
  double na = 0, nb = 0, both = 0;
  for (auto v : a.data) na += v ? 1 : 0;
  for (auto v : b.data) nb += v ? 1 : 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) both += (a.data[i] && b.data[i]) ? 1 : 0;
  return na + nb == 0 ? 1.0 : 2 * both / (na + nb);
}

/// Physical centres of the faces separating foreground from anything else.
inline std::vector<std::array<double, 3>> boundary_face_centres(const Mask& m) {
  const auto& e = m.extents;
  const auto& s = m.spacing;
  auto inside = [&](int z, int y, int x) {
    return z >= 0 && y >= 0 && x >= 0 && z < e.d && y < e.h && x < e.w && m.at(z, y, x);
  };
  static constexpr int kDirs[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  std::vector<std::array<double, 3>> out;
  for (int z = 0; z < e.d; ++z)
    for (int y = 0; y < e.h; ++y)
      for (int x = 0; x < e.w; ++x) {
        if (!inside(z, y, x)) continue;
        for (const auto& dir : kDirs) {
          if (inside(z + dir[0], y + dir[1], x + dir[2])) continue;
          out.push_back({(z + 0.5 + 0.5 * dir[0]) * s[0], (y + 0.5 + 0.5 * dir[1]) * s[1],
                         (x + 0.5 + 0.5 * dir[2]) * s[2]});
        }
      }
  return out;
}

/// All-pairs surface Dice at tolerance tol.
inline double nsd(const Mask& a, const Mask& b, double tol) {
  const auto fa = boundary_face_centres(a);
  const auto fb = boundary_face_centres(b);
  if (fa.empty() && fb.empty()) return 1.0;
  if (fa.empty() || fb.empty()) return 0.0;
  auto covered = [tol](const std::array<double, 3>& p, const std::vector<std::array<double, 3>>& other) {
    for (const auto& q : other) {
      const double d = std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                 (p[2] - q[2]) * (p[2] - q[2]));
      if (d <= tol + 1e-9) return true;
    }
    return false;
  };
  double hits = 0;
  for (const auto& p : fa) hits += covered(p, fb);
  for (const auto& p : fb) hits += covered(p, fa);
  return hits / static_cast<double>(fa.size() + fb.size());
}

/// Random mask: a union of up to three balls plus sparse speckle, so pairs
/// range from disjoint to heavily overlapping.
inline Mask random_mask(std::mt19937_64& rng, int n, Spacing spacing = {1.0, 1.0, 1.0}) {
  Mask m(Extents{n, n, n}, spacing);
  std::uniform_real_distribution<double> pos(0.0, n - 1.0), rad(1.0, n / 3.0), u(0.0, 1.0);
  const int balls = 1 + static_cast<int>(rng() % 3);
  for (int b = 0; b < balls; ++b) {
    const double cz = pos(rng), cy = pos(rng), cx = pos(rng), r = rad(rng);
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if ((z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.at(z, y, x) = 1;
  }
  for (auto& v : m.data)
    if (u(rng) < 0.002) v = 1;
  return m;
}

}  // namespace clopa::oracle
