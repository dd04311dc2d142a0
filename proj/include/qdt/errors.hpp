#pragma once

#include <stdexcept>
#include <string>

namespace qdt {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition or file schema.
class ValidationError : public Error {
public:
  using Error::Error;
};

class DimensionMismatch : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Poisson mass beyond the Fock cutoff exceeds the tolerance.
class TruncationInsufficient : public Error {
public:
  using Error::Error;
};

class QuadratureFailure : public Error {
public:
  using Error::Error;
};

/// Measured probabilities outside [0, 1].
class InfeasibleInput : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class NotConverged : public Error {
public:
  using Error::Error;
};

class ZeroElement : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class DimensionCap : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Joint data admits no state-level interpretation.
class InconsistentData : public Error {
public:
  using Error::Error;
};

inline std::string dims_string(long rows, long cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

} // namespace qdt
