#pragma once

#include <stdexcept>
#include <string>

namespace glssl {

// Base of every error raised by the library. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input files. Messages carry file and line where known.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// A row (or degree) that must be strictly positive is not.
class DegenerateError : public Error {
 public:
  DegenerateError(const std::string& what, std::size_t row)
      : Error(what + " (row " + std::to_string(row) + ")"), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int episode)
      : Error(what + " at episode " + std::to_string(episode)), episode_(episode) {}

  int episode() const noexcept { return episode_; }

 private:
  int episode_;
};

}  // namespace glssl
