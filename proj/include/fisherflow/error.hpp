#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace fisherflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched matrix or tensor dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, singular iterates, indefinite inputs, non-convergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input files.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration. `key()` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace fisherflow
