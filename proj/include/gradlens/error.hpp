#pragma once

#include <stdexcept>
#include <string>

namespace gradlens {

// Base of every error raised by the library. The CLI maps the subclasses
// onto exit codes, so new error kinds should derive from the closest one.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class UnsupportedOperatorError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class BackwardError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or unreadable input data (directories, files, empty sets).
class DataError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public DataError {
 public:
  using DataError::DataError;
};

class VersionMismatchError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values or a numerical tolerance breach.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace gradlens
