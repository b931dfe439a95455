#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace xvt {

// Error taxonomy. Each subclass corresponds to one failure contract of the
// public API; the CLI maps them to nonzero exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor/layer shapes. Messages name the offending shapes.
struct DimensionError : Error {
  using Error::Error;
};

// An API precondition was violated (wrong rank, non-scalar backward, ...).
struct ContractError : Error {
  using Error::Error;
};

// Invalid or inconsistent configuration (unknown keys, bad model spec).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed on-disk container (bad magic, truncation, version mismatch).
struct FormatError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// A metric is undefined for the given inputs (e.g. single-class AUC).
struct MetricError : Error {
  using Error::Error;
};

// Degenerate data that makes an operation meaningless (constant foreground,
// batch with no known labels, ...).
struct DegenerateInputError : Error {
  using Error::Error;
};

std::string shape_str(const std::vector<int>& shape);

}  // namespace xvt
