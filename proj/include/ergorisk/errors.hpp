#pragma once

#include <stdexcept>
#include <string>

namespace ergorisk {

// Base of every error the library raises. The CLI maps the two families
// below onto process exit codes (DataError -> 2, NumericFault -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: unreadable files, malformed records, out-of-domain values,
// inconsistent configuration.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class ValueError : public DataError {
 public:
  using DataError::DataError;
};

class DomainError : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

// A required landmark was absent; the sample cannot be scored.
class MissingLandmarkError : public DataError {
 public:
  using DataError::DataError;
};

// NaN/Inf appeared where finite values are required.
class NumericFault : public Error {
 public:
  using Error::Error;
};

}  // namespace ergorisk
