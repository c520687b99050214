#pragma once

#include <stdexcept>
#include <string>

namespace vde {

/// Base for all library errors; the CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/inf encountered, or a value outside the domain of an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Input is well-formed but carries too little information (empty mask,
/// constant map, fewer than two samples).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace vde
