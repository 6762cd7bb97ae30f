#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mogen {

/// Inconsistent or invalid configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent data files and datasets (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary file decoding failures; `offset` is the byte position of the fault.
class FormatError : public DataError {
 public:
  enum class Kind { MalformedHeader, DimensionMismatch, Truncated };

  FormatError(Kind kind, std::uint64_t offset, const std::string& what)
      : DataError(what + " (at byte " + std::to_string(offset) + ")"), kind_(kind), offset_(offset) {}

  Kind kind() const { return kind_; }
  std::uint64_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::uint64_t offset_;
};

/// Non-finite or runaway values (CLI exit code 4).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A factorization that could not be completed, e.g. a non-PSD kernel.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mogen
