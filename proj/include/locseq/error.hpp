#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace locseq {

// Base of every error the library throws. Callers that only care about
// "bad data vs. bad usage" catch this and map it to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric argument outside its documented domain (e.g. a coordinate > 1).
class RangeError : public Error {
 public:
  using Error::Error;
};

// A value violates a type invariant (label with "&", inverted box, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t offset)
      : Error(message + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

// Mathematical precondition failure (empty product, probability <= 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

// Inconsistent input files (unknown image id, schema violation).
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace locseq
