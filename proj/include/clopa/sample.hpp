#pragma once

#include <cstdint>
#include <vector>

#include "clopa/volume.hpp"

namespace clopa {

/// One annotated volume.
struct Sample {
  std::uint64_t id = 0;
  Image image;
  Mask gt;
  std::uint64_t seed = 0;  // generator seed, 0 when not synthetic
};

using SampleRefs = std::vector<const Sample*>;

}  // namespace clopa
