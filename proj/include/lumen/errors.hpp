#pragma once

#include <stdexcept>
#include <string>

namespace lumen {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or matrix extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf values, divergence, singular systems, non-convergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values, malformed config text, bad arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File-system and file-format failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lumen
