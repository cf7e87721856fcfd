#pragma once

#include <stdexcept>
#include <string>

namespace cmp {

// Base for every error raised by the library. `code()` is a short machine
// readable identifier surfaced by the CLI and the HTTP service.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message)
      : Error("invalid_argument", message) {}
};

class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& message)
      : Error("shape_mismatch", message) {}
};

class FormatError : public Error {
 public:
  FormatError(std::string code, const std::string& message)
      : Error(std::move(code), message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io_error", message) {}
};

}  // namespace cmp
