#pragma once

#include <stdexcept>
#include <string>

namespace rnet {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Label or element index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value, unknown key or unknown site/condition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (IDX, checkpoint, CSV).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss, gradient or function evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Violated call contract, e.g. backward from a non-scalar node.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of the routine.
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace rnet
