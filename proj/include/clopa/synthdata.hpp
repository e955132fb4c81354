#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clopa/sample.hpp"
#include "clopa/volume.hpp"

// Synthetic volumetric segmentation tasks.

namespace clopa {

enum class Geometry { Blob, SmallPair, BranchingTree, LowContrastBlob };

const char* geometry_name(Geometry g);
Geometry parse_geometry(const std::string& name);

struct TaskSpec {
  std::string name = "task";
  Geometry geometry = Geometry::Blob;
  Extents extents{32, 32, 32};
  Spacing spacing{1.0, 1.0, 1.0};
  double contrast = 3.0;  // foreground minus background, in noise standard deviations
  int dataset_size = 40;
  double nsd_tolerance = 1.0;
  double expert_threshold = 0.8;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

/// Foreground volume-fraction band of each geometry; small_pair has none
/// and reports [0, 1].
struct FractionBand {
  double lo = 0.0;
  double hi = 1.0;
};
FractionBand fraction_band(Geometry g);

inline constexpr double kNoiseSigma = 1.0;
inline constexpr double kBiasAmplitude = 0.05;  // bias field peak, relative to contrast
inline constexpr double kTreeMinFraction = 0.007;
inline constexpr double kTreeMaxFraction = 0.015;

/// Ground truth and image fully determined by (spec, seed).
Sample generate_sample(const TaskSpec& spec, std::uint64_t id, std::uint64_t seed);

struct Dataset {
  TaskSpec spec;
  std::uint64_t master_seed = 0;
  std::vector<Sample> samples;         // indexed by id
  std::vector<std::uint64_t> train;    // ascending
  std::vector<std::uint64_t> holdout;  // ascending

  SampleRefs refs(const std::vector<std::uint64_t>& ids) const;
};

std::uint64_t sample_seed(std::uint64_t master_seed, std::uint64_t id);

/// dataset_size samples and a seeded 50-50 split; with an odd size the
/// extra sample goes to the holdout set.
Dataset generate_task(const TaskSpec& spec, std::uint64_t master_seed);

std::string task_spec_to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const std::string& text);
TaskSpec load_task_spec(const std::filesystem::path& path);

/// Layout: task.json (spec, master seed, split) plus
/// volumes/sample_NNNN_image.clvx and volumes/sample_NNNN_label.clvx.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace clopa
