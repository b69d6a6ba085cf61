#pragma once

#include <stdexcept>
#include <string>

namespace nopf {

// Failure categories. The C API maps each onto a stable status code.
enum class ErrorKind {
  config,     // invalid configuration or violated precondition
  numerical,  // blow-up, non-finite values, divergence
  io,         // unreadable or unwritable file
  bad_magic,  // file is not of the expected format/version
  truncated,  // file ended before the declared content
  shape,      // declared sizes disagree with each other
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class FormatError : public Error {
 public:
  FormatError(ErrorKind kind, const std::string& what) : Error(kind, what) {}
};

}  // namespace nopf
