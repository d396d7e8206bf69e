#pragma once

#include <stdexcept>
#include <string>

namespace pneumo {

// Error categories. The CLI maps each category to a distinct exit status,
// so library code should throw the most specific type that applies.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape disagreement.
struct DimensionError : Error {
  using Error::Error;
};

// Out-of-range argument (rate >= 1, non-divisible geometry, ...).
struct ParameterError : Error {
  using Error::Error;
};

// Invalid or inconsistent run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data (manifests, images, reader files).
struct DataError : Error {
  using Error::Error;
};

// A required artifact (checkpoint, manifest, cache) is absent.
struct MissingInputError : Error {
  using Error::Error;
};

// Non-finite loss or other numeric breakdown.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace pneumo
