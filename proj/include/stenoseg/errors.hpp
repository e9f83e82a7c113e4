#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stenoseg {

// Base class for all toolkit errors. The CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input text. byte_offset is 0 when the position is unknown.
struct ParseError : Error {
  std::size_t byte_offset;
  explicit ParseError(const std::string& msg, std::size_t offset = 0)
      : Error(msg), byte_offset(offset) {}
};

struct ValidationError : Error {
  using Error::Error;
};

struct MergeError : Error {
  using Error::Error;
};

struct GeometryError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// External command failed; carries the captured combined stdout/stderr.
struct CommandError : Error {
  int exit_code;
  std::string output;
  CommandError(const std::string& msg, int code, std::string out)
      : Error(msg), exit_code(code), output(std::move(out)) {}
};

}  // namespace stenoseg
