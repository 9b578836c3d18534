#pragma once

#include <stdexcept>
#include <string>

namespace growbrain {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, plan or argument supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Value outside the mathematical domain of an operation (e.g. a label >= C).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Broken internal contract, e.g. a missing forward-cache entry.
class InternalError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf reached the optimizer.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace growbrain
