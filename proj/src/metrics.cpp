#include "clopa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace clopa {

double dice(const Mask& a, const Mask& b) {
  require_same_extents(a.extents, b.extents, "dice");
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<SurfaceFace> surface_faces(const Mask& m) {
  const auto& e = m.extents;
  std::vector<SurfaceFace> faces;
  auto fg = [&](int z, int y, int x) { return e.contains(z, y, x) && m.at(z, y, x) != 0; };
  for (int z = 0; z < e.d; ++z)
    for (int y = 0; y < e.h; ++y)
      for (int x = 0; x < e.w; ++x) {
        if (!fg(z, y, x)) continue;
        const int cz = 2 * z + 1, cy = 2 * y + 1, cx = 2 * x + 1;
        if (!fg(z - 1, y, x)) faces.push_back({cz - 1, cy, cx});
        if (!fg(z + 1, y, x)) faces.push_back({cz + 1, cy, cx});
        if (!fg(z, y - 1, x)) faces.push_back({cz, cy - 1, cx});
        if (!fg(z, y + 1, x)) faces.push_back({cz, cy + 1, cx});
        if (!fg(z, y, x - 1)) faces.push_back({cz, cy, cx - 1});
        if (!fg(z, y, x + 1)) faces.push_back({cz, cy, cx + 1});
      }
  return faces;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Felzenszwalb-Huttenlocher lower envelope of parabolas w2*(q-p)^2 + f[p]
// along one line of n samples.
void edt_line(double* f, std::ptrdiff_t stride, int n, double w2, std::vector<double>& d, std::vector<int>& v,
              std::vector<double>& zb) {
  int k = -1;
  for (int q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      zb[0] = -kInf;
      zb[1] = kInf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      const double fp = f[p * stride];
      s = ((fq + w2 * q * q) - (fp + w2 * static_cast<double>(p) * p)) / (2.0 * w2 * (q - p));
      if (s <= zb[k]) {
        if (--k < 0) break;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    zb[k] = k == 0 ? -kInf : s;
    zb[k + 1] = kInf;
  }
  if (k < 0) return;  // whole line empty
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (zb[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = w2 * dq * dq + f[v[j] * stride];
  }
  for (int q = 0; q < n; ++q) f[q * stride] = d[q];
}

}  // namespace

std::vector<double> squared_face_distance(const Extents& e, const Spacing& spacing,
                                          const std::vector<SurfaceFace>& faces) {
  const int nz = 2 * e.d + 1, ny = 2 * e.h + 1, nx = 2 * e.w + 1;
  std::vector<double> g(static_cast<std::size_t>(nz) * ny * nx, kInf);
  auto idx = [&](int z, int y, int x) { return (static_cast<std::size_t>(z) * ny + y) * nx + x; };
  for (const auto& f : faces) g[idx(f.z2, f.y2, f.x2)] = 0.0;

  const int nmax = std::max({nz, ny, nx});
  std::vector<double> d(nmax);
  std::vector<int> v(nmax);
  std::vector<double> zb(nmax + 1);
  const double hz = spacing[0] / 2.0, hy = spacing[1] / 2.0, hx = spacing[2] / 2.0;

  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y) edt_line(&g[idx(z, y, 0)], 1, nx, hx * hx, d, v, zb);
  for (int z = 0; z < nz; ++z)
    for (int x = 0; x < nx; ++x) edt_line(&g[idx(z, 0, x)], nx, ny, hy * hy, d, v, zb);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) edt_line(&g[idx(0, y, x)], static_cast<std::ptrdiff_t>(nx) * ny, nz, hz * hz, d, v, zb);
  return g;
}

double nsd(const Mask& a, const Mask& b, double tolerance) {
  require_same_extents(a.extents, b.extents, "nsd");
  if (a.spacing != b.spacing) throw std::invalid_argument("nsd: spacing mismatch");
  if (tolerance < 0.0) throw std::invalid_argument("nsd: tolerance must be non-negative");
  const auto fa = surface_faces(a);
  const auto fb = surface_faces(b);
  if (fa.empty() && fb.empty()) return 1.0;
  if (fa.empty() || fb.empty()) return 0.0;

  const int ny = 2 * a.extents.h + 1, nx = 2 * a.extents.w + 1;
  auto idx = [&](const SurfaceFace& f) { return (static_cast<std::size_t>(f.z2) * ny + f.y2) * nx + f.x2; };
  // The envelope sums squared terms in a different order than a direct
  // evaluation; the slack keeps faces lying exactly at the tolerance inside.
  const double limit = tolerance * tolerance * (1.0 + 1e-9);

  const auto da = squared_face_distance(a.extents, a.spacing, fa);
  const auto db = squared_face_distance(b.extents, b.spacing, fb);
  std::int64_t hits = 0;
  for (const auto& f : fa) hits += db[idx(f)] <= limit;
  for (const auto& f : fb) hits += da[idx(f)] <= limit;
  return static_cast<double>(hits) / static_cast<double>(fa.size() + fb.size());
}

double nauc(std::span<const double> series) {
  if (series.empty()) throw std::invalid_argument("nauc: empty series");
  const auto S = series.size() - 1;
  if (S == 0) return series[0];
  double area = 0.0;
  for (std::size_t i = 0; i < S; ++i) area += 0.5 * (series[i] + series[i + 1]);
  return area / static_cast<double>(S);
}

NoiResult noi(std::span<const double> dice_series, double threshold) {
  if (dice_series.empty()) throw std::invalid_argument("noi: empty series");
  for (std::size_t i = 0; i < dice_series.size(); ++i) {
    if (dice_series[i] >= threshold) return {static_cast<int>(i), false};
  }
  return {static_cast<int>(dice_series.size() - 1), true};
}

double normalised_noi(const NoiResult& r, int max_steps) {
  if (max_steps <= 0) return r.failed ? 100.0 : 0.0;
  return 100.0 * r.noi / max_steps;
}

}  // namespace clopa
