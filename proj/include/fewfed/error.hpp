#pragma once

#include <stdexcept>
#include <string>

namespace fewfed {

/// Base of every error raised by the library. `exit_code()` maps the error
/// onto the CLI convention: 1 runtime failure, 2 configuration/validation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Not enough labeled capacity on the chosen clients to place n labels.
class AllocationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Pattern literals alone do not fit into the sequence budget.
class CapacityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace fewfed
