#pragma once

#include <stdexcept>
#include <string>

namespace vhm {

// Every error raised by the library carries a category that the CLI maps to
// an exit code.
enum class ErrorCategory { kContract, kConfig, kData, kNumerics, kIo };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

// Violated operation preconditions: shape mismatches, non-scalar backward,
// attention rows with nothing to attend to.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what)
      : Error(ErrorCategory::kContract, what) {}
};

class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what)
      : Error(ErrorCategory::kData, what) {}
};

class EmptySequenceError : public DataError {
 public:
  using DataError::DataError;
};

class VocabularyError : public DataError {
 public:
  using DataError::DataError;
};

class NumericsError : public Error {
 public:
  explicit NumericsError(const std::string& what)
      : Error(ErrorCategory::kNumerics, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};

// 0 ok, 2 config, 3 data, 4 numerics, 5 io; contract violations are bugs.
inline int exit_code(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::kConfig:
      return 2;
    case ErrorCategory::kData:
      return 3;
    case ErrorCategory::kNumerics:
      return 4;
    case ErrorCategory::kIo:
      return 5;
    case ErrorCategory::kContract:
      break;
  }
  return 1;
}

}  // namespace vhm
