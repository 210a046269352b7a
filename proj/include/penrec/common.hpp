#pragma once

#include <stdexcept>
#include <string>

namespace penrec {

/// Base class for all recoverable toolkit errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// File could not be opened or read.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
};

/// A configuration file or option is invalid.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// A dataset record violates the format or an invariant (message names the line).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what) {}
};

/// No frame in the sample ever reaches the force threshold; caller drops it.
class AllHoverError : public Error {
 public:
  explicit AllHoverError(const std::string& what) : Error(what) {}
};

/// The label cannot be aligned to the output sequence (too few frames).
class UnalignableError : public Error {
 public:
  explicit UnalignableError(const std::string& what) : Error(what) {}
};

}  // namespace penrec
