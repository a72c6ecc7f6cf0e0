#pragma once

#include <stdexcept>
#include <string>

namespace poseformer {

/// Tensor extents do not conform for the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration value violates its contract (even frame count, rate >= 1, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An API was called in a state where it cannot run (backward on a leaf, missing gradient, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// File content could not be parsed.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File content parsed but disagrees with itself (byte lengths, shapes, versions).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace poseformer
