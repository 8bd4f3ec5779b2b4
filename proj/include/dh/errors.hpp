#pragma once

#include <stdexcept>
#include <string>

namespace dh {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched or non-broadcastable tensor shapes.
struct ShapeError : Error {
  using Error::Error;
};

// An operation precondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Corrupt, truncated or unreadable file content.
struct FormatError : Error {
  using Error::Error;
};

// A serialized artifact was written by an incompatible version.
struct VersionError : FormatError {
  using FormatError::FormatError;
};

// Invalid experiment configuration; message names the offending field.
struct ConfigError : Error {
  using Error::Error;
};

// NaN or Inf reached a loss or parameter update.
struct NumericError : Error {
  using Error::Error;
};

// The projected board does not cover any frame pixel.
struct EmptyRegionError : Error {
  using Error::Error;
};

// An attack could not be run (e.g. no draw produced a visible object).
struct AttackError : Error {
  using Error::Error;
};

}  // namespace dh
