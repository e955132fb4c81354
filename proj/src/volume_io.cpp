#include "clopa/volume_io.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "clopa/binary_io.hpp"
#include "clopa/fs.hpp"

namespace clopa {
namespace {

void write_header(std::ostream& os, const Extents& e, const Spacing& s) {
  os.write("CLVX", 4);
  io::put_u32(os, kVolumeVersion);
  io::put_u32(os, static_cast<std::uint32_t>(e.d));
  io::put_u32(os, static_cast<std::uint32_t>(e.h));
  io::put_u32(os, static_cast<std::uint32_t>(e.w));
  for (double v : s) io::put_f32(os, static_cast<float>(v));
}

struct Header {
  Extents extents;
  Spacing spacing;
  std::int64_t payload = 0;  // bytes after the header
};

Header read_header(std::istream& is) {
  io::expect_magic(is, "CLVX");
  const auto version = io::get_u32(is);
  if (version != kVolumeVersion) throw std::runtime_error("unsupported volume version " + std::to_string(version));
  Header h;
  h.extents.d = static_cast<int>(io::get_u32(is));
  h.extents.h = static_cast<int>(io::get_u32(is));
  h.extents.w = static_cast<int>(io::get_u32(is));
  if (h.extents.d <= 0 || h.extents.h <= 0 || h.extents.w <= 0) throw std::runtime_error("volume extents must be positive");
  for (auto& v : h.spacing) {
    v = io::get_f32(is);
    if (!(v > 0.0) || !std::isfinite(v)) throw std::runtime_error("volume spacing must be positive");
  }
  const auto here = is.tellg();
  is.seekg(0, std::ios::end);
  h.payload = static_cast<std::int64_t>(is.tellg() - here);
  is.seekg(here);
  return h;
}

}  // namespace

void write_volume(std::ostream& os, const Image& image) {
  write_header(os, image.extents, image.spacing);
  for (float v : image.data) io::put_f32(os, v);
}

void write_volume(std::ostream& os, const Mask& mask) {
  write_header(os, mask.extents, mask.spacing);
  for (auto v : mask.data) io::put_u8(os, v != 0);
}

Image read_image(std::istream& is) {
  const auto h = read_header(is);
  if (h.payload != 4 * h.extents.numel()) throw std::runtime_error("volume payload is not a float image of " + h.extents.str());
  Image im(h.extents, h.spacing);
  for (auto& v : im.data) {
    v = io::get_f32(is);
    if (!std::isfinite(v)) throw std::runtime_error("non-finite image intensity");
  }
  return im;
}

Mask read_mask(std::istream& is) {
  const auto h = read_header(is);
  if (h.payload != h.extents.numel()) throw std::runtime_error("volume payload is not a byte mask of " + h.extents.str());
  Mask m(h.extents, h.spacing);
  for (auto& v : m.data) {
    v = io::get_u8(is);
    if (v > 1) throw std::runtime_error("mask value outside {0,1}");
  }
  return m;
}

void save_volume(const std::filesystem::path& path, const Image& image) {
  std::ostringstream os(std::ios::binary);
  write_volume(os, image);
  write_file_atomic(path, os.str());
}

void save_volume(const std::filesystem::path& path, const Mask& mask) {
  std::ostringstream os(std::ios::binary);
  write_volume(os, mask);
  write_file_atomic(path, os.str());
}

Image load_image(const std::filesystem::path& path) {
  std::istringstream is(read_file(path), std::ios::binary);
  try {
    return read_image(is);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

Mask load_mask(const std::filesystem::path& path) {
  std::istringstream is(read_file(path), std::ios::binary);
  try {
    return read_mask(is);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace clopa
