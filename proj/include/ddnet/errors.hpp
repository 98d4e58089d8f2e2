#pragma once

#include <stdexcept>
#include <string>

namespace ddnet {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar hyperparameter is outside its domain (tau <= 0, alpha > 1, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An index (token id, label position) is out of range.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// A sequence is longer than the model accepts.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Dataset content does not satisfy the schema or its invariants.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent run configuration, checkpoint, or tokenizer.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ddnet
