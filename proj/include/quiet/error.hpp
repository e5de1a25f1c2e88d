// Error taxonomy shared by every module.
#pragma once

#include <stdexcept>
#include <string>

namespace quiet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or size disagreement between operands.
struct DimensionError : Error {
  using Error::Error;
};

// A documented precondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Malformed or out-of-range input data (samples, labels, files).
struct DataError : Error {
  using Error::Error;
};

// An iterative numeric routine failed to converge or produced
// non-finite values.
struct NumericError : Error {
  using Error::Error;
};

// Inconsistent or unusable configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem or serialization failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace quiet
