#pragma once

#include <stdexcept>
#include <string>

namespace ctcloud {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or out-of-contract sizes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent hyperparameters or model wiring.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid labels, categories or dataset contents.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the offending line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// API misuse, e.g. calling backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctcloud
