#pragma once

#include <stdexcept>
#include <string>

namespace lri {

/// Base class for all library errors. The CLI maps each subclass to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Arguments outside the mathematical domain of an operation (|m| > n, empty mask, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid layer/model/run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input/output shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Filesystem and parse failures. The message always carries the offending path.
class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Non-finite loss or gradient during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace lri
