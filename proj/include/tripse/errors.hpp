#pragma once

#include <stdexcept>
#include <string>

namespace tripse {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AutodiffError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Batch statistics are undefined for a single value per channel.
struct DegenerateBatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tripse
