#pragma once

#include <stdexcept>
#include <string>

namespace clopa {

/// Malformed or inconsistent configuration; names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input artifact (dataset, manifest, checkpoint) is absent.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace clopa
