#pragma once

#include <stdexcept>
#include <string>

namespace bmx {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside a function's mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public FormatError {
 public:
  VersionMismatch(unsigned found, unsigned expected)
      : FormatError("checkpoint version " + std::to_string(found) + " is not supported (expected " +
                    std::to_string(expected) + ")") {}
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint and run configuration disagree.
class MismatchError : public Error {
 public:
  using Error::Error;
};

/// A training loss became NaN or infinite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace bmx
