#pragma once

#include <stdexcept>
#include <string>

namespace murel {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes or sizes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of an operation (empty reduction, N = 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Index out of range (class target, token id, step number).
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Operation called in a mode where its contract does not hold.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Optimizer or trainer state is inconsistent (missing gradient, non-finite loss).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message carries the path.
class FileError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset, config or checkpoint content.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace murel
