#pragma once

#include <stdexcept>
#include <string>

namespace meshforge {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A declared invariant does not hold (the message names the invariant).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Mismatched tensor/joint/vertex counts.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values appeared where they must not.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Linear solver failed to reach its tolerance.
class SolverError : public Error {
 public:
  using Error::Error;
};

// Simulation diverged.
class InstabilityError : public Error {
 public:
  using Error::Error;
};

// Geometrically degenerate input (collinear points, zero-length spring, ...).
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

// File and parse errors.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training loop failure (NaN loss etc.).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace meshforge
