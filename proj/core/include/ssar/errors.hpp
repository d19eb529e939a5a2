#pragma once

#include <stdexcept>
#include <string>

namespace ssar {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or layer dimensions that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid settings: hyperparameters, architecture descriptors, CLI options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input files and volumes.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a computation, or an unsupported autodiff request.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssar
