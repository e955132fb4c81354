#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace clopa {

/// Voxel extents in (z, y, x) order.
struct Extents {
  int d = 0;
  int h = 0;
  int w = 0;

  std::int64_t numel() const { return static_cast<std::int64_t>(d) * h * w; }
  bool contains(int z, int y, int x) const { return z >= 0 && z < d && y >= 0 && y < h && x >= 0 && x < w; }
  std::int64_t index(int z, int y, int x) const { return (static_cast<std::int64_t>(z) * h + y) * w + x; }
  std::string str() const { return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w); }
  friend bool operator==(const Extents&, const Extents&) = default;
};

/// Physical voxel size in (z, y, x) order.
using Spacing = std::array<double, 3>;

struct Voxel {
  int z = 0;
  int y = 0;
  int x = 0;
  friend bool operator==(const Voxel&, const Voxel&) = default;
};

/// Dense 3-D grid carrying either image intensities or a binary mask.
template <class T>
struct Volume {
  Extents extents;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<T> data;

  Volume() = default;
  explicit Volume(Extents e, Spacing s = {1.0, 1.0, 1.0}, T fill = T{})
      : extents(e), spacing(s), data(static_cast<std::size_t>(e.numel()), fill) {
    if (e.d <= 0 || e.h <= 0 || e.w <= 0) throw std::invalid_argument("volume extents must be positive");
  }

  T& at(int z, int y, int x) { return data[static_cast<std::size_t>(extents.index(z, y, x))]; }
  const T& at(int z, int y, int x) const { return data[static_cast<std::size_t>(extents.index(z, y, x))]; }
  T& at(const Voxel& v) { return at(v.z, v.y, v.x); }
  const T& at(const Voxel& v) const { return at(v.z, v.y, v.x); }

  friend bool operator==(const Volume&, const Volume&) = default;
};

using Image = Volume<float>;
using Mask = Volume<std::uint8_t>;

inline std::int64_t count_foreground(const Mask& m) {
  std::int64_t n = 0;
  for (auto v : m.data) n += v != 0;
  return n;
}

inline void require_same_extents(const Extents& a, const Extents& b, const char* what) {
  if (!(a == b)) throw std::invalid_argument(std::string(what) + ": extent mismatch " + a.str() + " vs " + b.str());
}

}  // namespace clopa
