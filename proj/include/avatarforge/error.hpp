#pragma once

#include <stdexcept>
#include <string>

namespace avatarforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing, unreadable or unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Well-read bytes that do not follow the expected layout (PNG, PLY, JSON).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A structurally valid file whose fields are not the ones required.
class SchemaError : public FormatError {
 public:
  using FormatError::FormatError;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// A value outside the domain an operation accepts.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ProcessError : public Error {
 public:
  ProcessError(const std::string& what, int exit_code, std::string stderr_text = {})
      : Error(what), exit_code_(exit_code), stderr_(std::move(stderr_text)) {}
  int exit_code() const { return exit_code_; }
  const std::string& stderr_text() const { return stderr_; }

 private:
  int exit_code_;
  std::string stderr_;
};

// Wraps an error from one pipeline stage with the stage's name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace avatarforge
