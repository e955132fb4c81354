#pragma once

#include <filesystem>
#include <iosfwd>

#include "clopa/volume.hpp"

// CLVX volume files: "CLVX", u32 version, u32 extents (d, h, w), f32
// spacing (z, y, x), then the voxel payload in row-major order, f32 for
// images and u8 for masks. Little-endian throughout; the payload size tells
// the two kinds apart.

namespace clopa {

inline constexpr std::uint32_t kVolumeVersion = 1;

void write_volume(std::ostream& os, const Image& image);
void write_volume(std::ostream& os, const Mask& mask);
Image read_image(std::istream& is);
Mask read_mask(std::istream& is);

void save_volume(const std::filesystem::path& path, const Image& image);
void save_volume(const std::filesystem::path& path, const Mask& mask);
Image load_image(const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);

}  // namespace clopa
