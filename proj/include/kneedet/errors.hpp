#pragma once

#include <stdexcept>

namespace kneedet {

// Base class for all toolkit errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed text or binary input (cfg, labels, index csv, weights, netpbm).
struct ParseError : Error {
  using Error::Error;
};

// Missing or unreadable files.
struct IoError : Error {
  using Error::Error;
};

// Values that violate an operation's preconditions: non-finite coordinates,
// degenerate geometry, shape mismatches.
struct InvalidInputError : Error {
  using Error::Error;
};

// Non-finite values produced at run time (activations, losses).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace kneedet
