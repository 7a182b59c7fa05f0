#pragma once

#include <stdexcept>
#include <string>

namespace lvnet {

// Error taxonomy maps onto CLI exit codes: usage=1, config=2 (also bad
// runtime data), io=3, numeric=4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inconsistent hyperparameters or shape plans (divisibility, dim mismatch).
struct ConfigError : Error {
  using Error::Error;
};

// Well-formed call, bad data (out-of-range pixels, non-binary masks).
struct ValidationError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct UsageError : Error {
  using Error::Error;
};

// NaN/Inf contract violations, missing gradients, diverged training.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace lvnet
