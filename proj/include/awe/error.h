#pragma once

#include <stdexcept>
#include <string>

namespace awe {

// Every error carries the name of the module that raised it so the CLI can
// print module-qualified messages.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}
  const std::string& module() const { return module_; }

 private:
  std::string module_;
};

// Bad command line. Maps to exit code 1.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("cli", what) {}
};

// Data and contract violations. Map to exit code 2.
class DataError : public Error {
  using Error::Error;
};
class ParseError : public DataError {
  using DataError::DataError;
};
class LookupError : public DataError {
  using DataError::DataError;
};
class ConflictError : public DataError {
  using DataError::DataError;
};
class ShapeError : public DataError {
  using DataError::DataError;
};
class ContractError : public DataError {
  using DataError::DataError;
};
class DegenerateInputError : public DataError {
  using DataError::DataError;
};
class IoError : public DataError {
  using DataError::DataError;
};

// NaN/Inf during training, failed gradient checks. Maps to exit code 3.
class NumericalError : public Error {
  using Error::Error;
};

}  // namespace awe
