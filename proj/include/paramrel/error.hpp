#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace paramrel {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Nonfinite or out-of-domain data values.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed binary input. offset is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

// h^-1 would produce a nonpositive precision.
class SingularInverseError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// A loss term became NaN or infinite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace paramrel
