#pragma once

// Small configurations that keep training-path tests in the millisecond range.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "clopa/model.hpp"
#include "clopa/synthdata.hpp"
#include "clopa/trainer.hpp"

namespace clopa::fixture {

inline TaskSpec tiny_spec(int dataset_size = 20) {
  TaskSpec s;
  s.name = "tiny";
  s.geometry = Geometry::Blob;
  s.extents = {8, 8, 8};
  s.dataset_size = dataset_size;
  return s;
}

inline ModelConfig tiny_model() {
  ModelConfig m;
  m.num_stages = 2;
  m.base_channels = 2;
  return m;
}

inline TrainConfig tiny_trainer() {
  TrainConfig t;
  t.epochs = 2;
  t.updates_per_epoch = 2;
  t.interaction_steps = 2;
  t.patch_extent = 8;
  t.lr = 1e-2;
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("clopa_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace clopa::fixture
