#pragma once

#include <stdexcept>
#include <string>

namespace stun {

// Root of every error the library throws. Callers that only care about
// "did the operation fail" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition on an argument value was violated.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Bad magic, unsupported version or malformed header.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Stored CRC or declared lengths disagree with the bytes on disk.
class ChecksumError : public Error {
 public:
  using Error::Error;
};

// The requested sparsity cannot be met with the remaining prunable mass.
class InfeasibleBudgetError : public Error {
 public:
  using Error::Error;
};

// Statistic undefined for the input (e.g. zero variance).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Exhaustive search refused because the subset count exceeds the cap.
class EnumerationCapError : public Error {
 public:
  EnumerationCapError(const std::string& what, std::string count)
      : Error(what), count_(std::move(count)) {}
  const std::string& count() const noexcept { return count_; }

 private:
  std::string count_;
};

// Exact count does not fit in 64 bits; the decimal string is still exact.
class BigCountError : public Error {
 public:
  explicit BigCountError(std::string decimal)
      : Error("subset count exceeds 64 bits: " + decimal),
        decimal_(std::move(decimal)) {}
  const std::string& decimal() const noexcept { return decimal_; }

 private:
  std::string decimal_;
};

}  // namespace stun
