#pragma once

#include <stdexcept>
#include <string>

namespace pimpnet {

// Runtime failures surface as exceptions; the CLI maps them to exit code 1.
// Configuration and usage problems map to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raised by the config parser and by invariant validation at load time.
// The message names the offending key and, when known, the line.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class IoCode {
  bad_magic,
  bad_version,
  truncated,
  bad_payload,
  io_failure,
};

class IoError : public Error {
 public:
  IoError(IoCode code, const std::string& what) : Error(what), code_(code) {}
  IoCode code() const { return code_; }

 private:
  IoCode code_;
};

}  // namespace pimpnet
