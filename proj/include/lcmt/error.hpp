#pragma once

#include <stdexcept>
#include <string>

namespace lcmt {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/width mismatch between tensor operands.
struct DimError : Error {
  using Error::Error;
};

// Token or target index out of range for its table.
struct IndexError : Error {
  using Error::Error;
};

// A forward op produced NaN/Inf. Raised immediately, never propagated.
struct NonFiniteError : Error {
  using Error::Error;
};

// Malformed constraint data (empty phrase, overlapping spans, bad origin).
struct ConstraintError : Error {
  using Error::Error;
};

// Inconsistent run configuration (bad block index, mode/checkpoint mismatch).
struct ConfigError : Error {
  using Error::Error;
};

// File system / parse failures with location info where available.
struct IoError : Error {
  using Error::Error;
};

// Container corruption: bad magic, bad version, CRC mismatch, truncation.
struct FormatError : Error {
  using Error::Error;
};

// Training diverged (non-finite loss) or grad verification failed to run.
struct TrainError : Error {
  using Error::Error;
};

}  // namespace lcmt
