#pragma once

#include <stdexcept>
#include <string>

namespace qrw {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// NaN or Inf detected in a named tensor.
class NumericError : public Error {
 public:
  NumericError(const std::string& tensor, const std::string& what)
      : Error(what + " in tensor '" + tensor + "'"), tensor_(tensor) {}

  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

}  // namespace qrw
