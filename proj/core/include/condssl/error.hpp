#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace condssl {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or violated precondition on user input.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed input file. line() is 1-based; 0 when the error is not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Sampler cannot satisfy a batch composition (too few slides or tiles).
class SamplingError : public Error {
 public:
  using Error::Error;
};

// Optimizer did not converge, diverged, or produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace condssl
