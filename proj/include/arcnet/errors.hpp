#pragma once

#include <stdexcept>
#include <string>

namespace arcnet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatches.
struct ShapeError : Error {
  using Error::Error;
};

// Malformed or missing external data (raw files, containers, checkpoints).
struct DataError : Error {
  using Error::Error;
};

// Non-finite values or failed numeric checks.
struct NumericError : Error {
  using Error::Error;
};

// Invalid settings (bad hyperparameters, unknown keys).
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace arcnet
