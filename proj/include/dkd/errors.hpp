#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dkd {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or axis disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Layer list cannot be assembled into a valid model.
class BuildError : public Error {
 public:
  using Error::Error;
};

// Dataset could not be read or is structurally unusable.
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary or text input. Carries the byte offset (or line number for
// text formats) where decoding stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset, const char* unit = "offset")
      : Error(what + " (at " + unit + " " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace dkd
